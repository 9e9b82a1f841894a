'''
   mean-reduced losses and evaluation metrics

   every loss is (1/N) * sum of per-sample losses, N the batch
   dimension, and carries dL/d(output) so autograd_func.backward
   can start from it

   access these values in other modules by
        import func_module.loss_func as lf
'''

from dataclasses import dataclass

import numpy as np

import func_module.autograd_func as ag
import func_module.errors_func as er

# probabilities are clamped to [CLAMP, 1 - CLAMP] before any log
CLAMP = 1e-12
DICE_SMOOTHING = 1.0
METRIC_THRESHOLD = 0.5

LOSS_KINDS = ('mse', 'cross_entropy', 'bce', 'dice', 'bce_dice')
# losses whose target layout matches each task
TASK_LOSSES = {'classification': ('cross_entropy',),
               'segmentation': ('mse', 'bce', 'dice', 'bce_dice')}


@dataclass
class LossValue:
    value: float
    n_samples: int
    kind: str = ''
    # dL/d(output), None for a value with no autograd history
    output_grad: np.ndarray | None = None
    reduction: str = 'mean'

    def __post_init__(self):
        self.value = float(self.value)
        if not np.isfinite(self.value):
            raise er.NumericOverflowError(f'{self.kind} loss is not finite')

    def scaled(self, factor):
        grad = None if self.output_grad is None \
            else self.output_grad * factor
        return LossValue(self.value * factor, self.n_samples,
                         self.kind, grad)


@dataclass
class MaskPair:
    '''
        batch-first prediction probabilities and binary ground truth;
        a 1-D pair is a single image
    '''
    prediction: np.ndarray
    ground_truth: np.ndarray

    def __post_init__(self):
        pred = np.asarray(self.prediction, dtype= ag.DTYPE)
        truth = np.asarray(self.ground_truth, dtype= ag.DTYPE)
        if pred.shape != truth.shape:
            raise er.ShapeError(
                f'prediction {pred.shape} and ground truth '
                f'{truth.shape} differ')
        if pred.ndim == 1:
            pred, truth = pred[None, :], truth[None, :]
        if np.any(pred < 0.0) or np.any(pred > 1.0):
            raise ValueError('prediction entries must lie in [0, 1]')
        if not np.all((truth == 0.0) | (truth == 1.0)):
            raise ValueError('ground truth must be binary')
        self.prediction = pred
        self.ground_truth = truth

    @property
    def n_samples(self):
        return self.prediction.shape[0]


def _data(item):
    if isinstance(item, ag.Tensor):
        return item.data
    return np.asarray(item, dtype= ag.DTYPE)


def sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _per_sample_axes(arr):
    return tuple(range(1, arr.ndim))


#######################  loss terms  ##################################

# each term returns (per-sample values, d(mean loss)/d(input))


def _mse_terms(out, target):
    n = out.shape[0]
    m = out[0].size
    diff = out - target
    per_sample = (diff * diff).mean(axis= _per_sample_axes(diff))
    return per_sample, diff * (2.0 / (n * m))


def _cross_entropy_terms(logits, target):
    if logits.ndim != 2:
        raise er.ShapeError(
            f'cross_entropy expects (N, C) logits, got {logits.shape}')
    classes = np.asarray(target)
    if classes.shape != (logits.shape[0],):
        raise er.ShapeError(
            f'cross_entropy targets {classes.shape} do not match '
            f'{logits.shape[0]} samples')
    classes = classes.astype(np.int64)
    if np.any(classes < 0) or np.any(classes >= logits.shape[1]):
        raise ValueError('class index outside the logit dimension')
    n = logits.shape[0]
    shifted = logits - logits.max(axis= 1, keepdims= True)
    log_norm = np.log(np.exp(shifted).sum(axis= 1, keepdims= True))
    log_prob = shifted - log_norm
    rows = np.arange(n)
    per_sample = -log_prob[rows, classes]
    grad = np.exp(log_prob)
    grad[rows, classes] -= 1.0
    return per_sample, grad / n


def _bce_prob_terms(prob, truth):
    '''
        gradient w.r.t. the (clamped) probabilities
    '''
    n = prob.shape[0]
    m = prob[0].size
    clamped = np.clip(prob, CLAMP, 1.0 - CLAMP)
    elementwise = -(truth * np.log(clamped)
                    + (1.0 - truth) * np.log(1.0 - clamped))
    per_sample = elementwise.mean(axis= _per_sample_axes(prob))
    grad = (clamped - truth) / (clamped * (1.0 - clamped))
    return per_sample, grad / (n * m)


def _bce_logit_terms(logits, truth):
    n = logits.shape[0]
    m = logits[0].size
    prob = sigmoid(logits)
    per_sample, _ = _bce_prob_terms(prob, truth)
    return per_sample, (prob - truth) / (n * m)


def _soft_dice_terms(prob, truth, smoothing):
    '''
        per image: 1 - (2 sum(p g) + s) / (sum(p) + sum(g) + s)
        an image with zero denominator (s = 0, both empty) scores 0
    '''
    n = prob.shape[0]
    axes = _per_sample_axes(prob)
    inter = (prob * truth).sum(axis= axes)
    denom = prob.sum(axis= axes) + truth.sum(axis= axes) + smoothing
    numer = 2.0 * inter + smoothing
    empty = denom == 0.0
    safe = np.where(empty, 1.0, denom)
    per_sample = np.where(empty, 0.0, 1.0 - numer / safe)
    shape = (n,) + (1,) * (prob.ndim - 1)
    # d/dp of -(numer/denom) = -(2 g denom - numer) / denom^2
    grad = -(2.0 * truth * safe.reshape(shape) - numer.reshape(shape)) \
        / (safe * safe).reshape(shape)
    grad = np.where(empty.reshape(shape), 0.0, grad)
    return per_sample, grad / n


def _mean_loss_value(per_sample):
    return float(per_sample.mean())


#######################  public losses  ###############################

def mean_loss(kind, output, target, from_logits= True,
              smoothing= DICE_SMOOTHING):
    '''
        kind: mse | cross_entropy | bce | dice | bce_dice
        cross_entropy: output are logits, target class indices
        bce, dice, bce_dice: output are logits (from_logits) or
        probabilities, target a binary mask of the same shape
    '''
    out = _data(output)
    if out.ndim < 1 or out.shape[0] < 1:
        raise er.ShapeError(f'{kind} needs a batch, got shape {out.shape}')
    if kind == 'cross_entropy':
        per_sample, grad = _cross_entropy_terms(out, target)
        return LossValue(_mean_loss_value(per_sample), out.shape[0],
                         kind, grad)

    truth = _data(target)
    if truth.shape != out.shape:
        raise er.ShapeError(
            f'{kind} output {out.shape} and target {truth.shape} differ')
    if kind == 'mse':
        per_sample, grad = _mse_terms(out, truth)
    elif kind == 'bce':
        per_sample, grad = _bce_logit_terms(out, truth) if from_logits \
            else _bce_prob_terms(out, truth)
    elif kind in ('dice', 'bce_dice'):
        prob = sigmoid(out) if from_logits else out
        per_sample, grad = _soft_dice_terms(prob, truth, smoothing)
        if from_logits:
            grad = grad * prob * (1.0 - prob)
        if kind == 'bce_dice':
            bce_sample, bce_grad = _bce_logit_terms(out, truth) \
                if from_logits else _bce_prob_terms(out, truth)
            return LossValue(_mean_loss_value(bce_sample)
                             + _mean_loss_value(per_sample),
                             out.shape[0], kind, bce_grad + grad)
    else:
        raise ValueError(f'loss kind must be one of {LOSS_KINDS}, got {kind}')
    return LossValue(_mean_loss_value(per_sample), out.shape[0], kind, grad)


def bce(pair):
    per_sample, grad = _bce_prob_terms(pair.prediction, pair.ground_truth)
    return LossValue(_mean_loss_value(per_sample), pair.n_samples,
                     'bce', grad)


def dice_loss(pair, smoothing= DICE_SMOOTHING):
    '''
        soft (unthresholded) Dice loss, 1 - DC, mean over images
    '''
    per_sample, grad = _soft_dice_terms(pair.prediction,
                                        pair.ground_truth, smoothing)
    return LossValue(_mean_loss_value(per_sample), pair.n_samples,
                     'dice', grad)


def combined_bce_dice(pair, smoothing= DICE_SMOOTHING):
    bce_part = bce(pair)
    dice_part = dice_loss(pair, smoothing)
    return LossValue(bce_part.value + dice_part.value, pair.n_samples,
                     'bce_dice', bce_part.output_grad + dice_part.output_grad)


#######################  metrics  #####################################

def _binarize(pair, threshold):
    if not 0.0 < threshold < 1.0:
        raise ValueError('threshold must lie in (0, 1)')
    return pair.prediction >= threshold, pair.ground_truth >= 0.5


def overlap_counts(pair, threshold= METRIC_THRESHOLD):
    '''
        per-image |A and B|, |A or B|, |A|, |B| after thresholding
        A is the ground truth, B the prediction
    '''
    predicted, truth = _binarize(pair, threshold)
    axes = _per_sample_axes(predicted)
    return {'intersection': np.sum(predicted & truth, axis= axes),
            'union': np.sum(predicted | truth, axis= axes),
            'truth': np.sum(truth, axis= axes),
            'predicted': np.sum(predicted, axis= axes)}


def _ratio(numer, denom):
    '''
        elementwise numer / denom, 1 where denom is 0 (both empty)
    '''
    numer = np.asarray(numer, dtype= ag.DTYPE)
    denom = np.asarray(denom, dtype= ag.DTYPE)
    return np.where(denom == 0.0, 1.0,
                    numer / np.where(denom == 0.0, 1.0, denom))


def dice_coefficient(pair, threshold= METRIC_THRESHOLD):
    '''
        2 |A and B| / (|A| + |B|) per image, mean over the batch
    '''
    counts = overlap_counts(pair, threshold)
    return float(np.mean(_ratio(2 * counts['intersection'],
                                counts['truth'] + counts['predicted'])))


def iou(pair, threshold= METRIC_THRESHOLD):
    '''
        |A and B| / |A or B| per image, mean over the batch
    '''
    counts = overlap_counts(pair, threshold)
    return float(np.mean(_ratio(counts['intersection'], counts['union'])))


def pooled_scores(counts):
    '''
        micro averages: dataset-wide sums before the ratio
        counts: overlap_counts output, possibly concatenated
    '''
    inter = int(np.sum(counts['intersection']))
    union = int(np.sum(counts['union']))
    size = int(np.sum(counts['truth']) + np.sum(counts['predicted']))
    return {'iou': float(_ratio(inter, union)),
            'dice': float(_ratio(2 * inter, size))}


def accuracy(output, target):
    '''
        fraction of samples whose argmax equals the target class
        ties go to the lowest class index
    '''
    out = _data(output)
    classes = np.asarray(target).astype(np.int64)
    if out.ndim != 2 or classes.shape != (out.shape[0],):
        raise er.ShapeError(
            f'accuracy expects (N, C) output and (N,) targets, '
            f'got {out.shape} and {classes.shape}')
    return float(np.mean(out.argmax(axis= 1) == classes))
