'''
   micro-batch streaming training loop

   a mini-batch is split into contiguous micro-batches; each one is
   run forward, its mean loss is normalized, its gradient is added
   to the accumulator; the optimizer steps once after the last one

   access these values in other modules by
        import func_module.mbs_func as mb
'''

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from itertools import islice

import numpy as np

import func_module.autograd_func as ag
import func_module.errors_func as er
import func_module.helper_func as hp
import func_module.loss_func as lf
import func_module.optim_func as op

# tensorized micro-batches allowed in flight ahead of compute
PREFETCH_SLOTS = 2


class NormalizationMode(str, Enum):
    PAPER_FAITHFUL = 'paper_faithful'
    EXACT_WEIGHTED = 'exact_weighted'
    OFF = 'off'


@dataclass(frozen= True)
class MicroBatchPlan:
    n_b: int
    n_mu: int
    n_s_mu: int
    sizes: tuple
    # (start, stop) per micro-batch, stop exclusive
    index_ranges: tuple


def plan_split(n_b, n_mu):
    '''
        n_mu is clamped to n_b; n_s_mu = ceil(n_b / n_mu);
        full micro-batches of n_mu, then the remainder if any
    '''
    if n_b < 1 or n_mu < 1:
        raise ValueError(
            f'mini-batch and micro-batch sizes must be positive, '
            f'got {n_b} and {n_mu}')
    if n_b < n_mu:
        n_mu = n_b
    n_s_mu = -(-n_b // n_mu)
    sizes = [n_mu] * (n_b // n_mu)
    if n_b % n_mu:
        sizes.append(n_b % n_mu)
    starts = np.cumsum([0] + sizes[:-1]).tolist()
    ranges = tuple((start, start + size)
                   for start, size in zip(starts, sizes))
    return MicroBatchPlan(n_b= n_b, n_mu= n_mu, n_s_mu= n_s_mu,
                          sizes= tuple(sizes), index_ranges= ranges)


def normalization_factor(plan, k, mode):
    mode = NormalizationMode(mode)
    if not 0 <= k < plan.n_s_mu:
        raise IndexError(
            f'micro-batch {k} outside plan of {plan.n_s_mu}')
    if mode is NormalizationMode.PAPER_FAITHFUL:
        return 1.0 / plan.n_s_mu
    if mode is NormalizationMode.EXACT_WEIGHTED:
        return plan.sizes[k] / plan.n_b
    return 1.0


def normalize_loss(loss, plan, k, mode):
    '''
        paper_faithful: loss / n_s_mu
        exact_weighted: loss * size_k / n_b
        off:            loss
    '''
    return loss.scaled(normalization_factor(plan, k, mode))


@dataclass
class GradientAccumulator:
    sums: ag.GradientSet
    limit: int
    micro_batches_seen: int = 0

    @classmethod
    def start(cls, params, plan):
        return cls(sums= ag.GradientSet.zeros_like(params),
                   limit= plan.n_s_mu)

    def reset(self):
        for grad in self.sums.values():
            grad[...] = 0.0
        self.micro_batches_seen = 0


def accumulate(acc, grads):
    '''
        sums += grads, element-wise, in the order called
    '''
    if acc.micro_batches_seen >= acc.limit:
        raise er.AccumulationError(
            f'accumulator already holds all {acc.limit} micro-batches')
    grads.check_matches(acc.sums)
    for name, grad in grads.items():
        acc.sums[name] += grad
    acc.micro_batches_seen += 1
    return acc


#######################  one mini-batch  ##############################

@dataclass
class MiniBatchStats:
    plan: MicroBatchPlan
    # raw mean loss of each micro-batch
    micro_losses: list = field(default_factory= list)
    # after normalize_loss
    normalized_losses: list = field(default_factory= list)
    # sum_k size_k / n_b * raw_k, the mean loss over the mini-batch
    loss: float = 0.0
    grad_norm: float = 0.0
    step_count: int = 0
    # learning rate of the update that closed this mini-batch
    lr: float = 0.0
    # train-mode outputs of every micro-batch, in sample order
    outputs: np.ndarray | None = None


def _stream(batch, plan, prefetch):
    '''
        yields the micro-batches of batch in plan order; with prefetch
        a worker thread tensorizes up to PREFETCH_SLOTS ahead
    '''
    if not prefetch:
        for start, stop in plan.index_ranges:
            yield batch.slice(start, stop)
        return
    ranges = iter(plan.index_ranges)
    with ThreadPoolExecutor(max_workers= 1) as pool:
        pending = deque(pool.submit(batch.slice, start, stop)
                        for start, stop in islice(ranges, PREFETCH_SLOTS))
        while pending:
            micro = pending.popleft().result()
            following = next(ranges, None)
            if following is not None:
                pending.append(pool.submit(batch.slice, *following))
            yield micro


def accumulate_mini_batch(model, params, batch, plan, mode, loss_kind,
                          from_logits= True, smoothing= lf.DICE_SMOOTHING,
                          fold_into_seed= False, prefetch= False):
    '''
        forward, loss, normalize, backward, accumulate for each
        micro-batch of plan; no parameter update
        fold_into_seed applies the normalization factor as the
        backward seed instead of scaling the loss
        returns (GradientAccumulator, MiniBatchStats)
    '''
    if len(batch) != plan.n_b:
        raise er.ShapeError(
            f'batch of {len(batch)} samples does not match plan '
            f'for {plan.n_b}')
    acc = GradientAccumulator.start(params, plan)
    stats = MiniBatchStats(plan= plan)
    outputs = []
    for k, micro in enumerate(_stream(batch, plan, prefetch)):
        output, tape = ag.forward(model, params, micro.inputs, 'train')
        loss = lf.mean_loss(loss_kind, output, micro.targets,
                            from_logits= from_logits, smoothing= smoothing)
        factor = normalization_factor(plan, k, mode)
        if fold_into_seed:
            grads = ag.backward(tape, loss, loss_grad_seed= factor)
            normalized = loss.value * factor
        else:
            normed = normalize_loss(loss, plan, k, mode)
            grads = ag.backward(tape, normed)
            normalized = normed.value
        accumulate(acc, grads)
        stats.micro_losses.append(loss.value)
        stats.normalized_losses.append(normalized)
        outputs.append(output.data)

    stats.loss = sum(size / plan.n_b * value
                     for size, value in zip(plan.sizes, stats.micro_losses))
    stats.grad_norm = acc.sums.norm()
    stats.outputs = np.concatenate(outputs, axis= 0)
    return acc, stats


def train_mini_batch(model, params, batch, plan, mode, loss_kind,
                     optimizer_state, from_logits= True,
                     smoothing= lf.DICE_SMOOTHING, fold_into_seed= False,
                     prefetch= False):
    '''
        accumulate over every micro-batch of plan, then exactly one
        optimizer step with the accumulated gradient as-is
        returns (params, MiniBatchStats)
    '''
    acc, stats = accumulate_mini_batch(
        model, params, batch, plan, mode, loss_kind,
        from_logits= from_logits, smoothing= smoothing,
        fold_into_seed= fold_into_seed, prefetch= prefetch)
    stats.lr = optimizer_state.lr
    op.apply_update(params, acc.sums, optimizer_state)
    acc.reset()
    stats.step_count = optimizer_state.step_count
    return params, stats


#######################  metrics  #####################################

def batch_metrics(task, outputs, targets, from_logits= True,
                  threshold= lf.METRIC_THRESHOLD):
    '''
        classification: accuracy
        segmentation: macro iou and dice plus the pooled counts
    '''
    if task == 'classification':
        return {'accuracy': lf.accuracy(outputs, targets)}
    prob = lf.sigmoid(outputs) if from_logits else outputs
    pair = lf.MaskPair(prob, targets)
    return {'iou': lf.iou(pair, threshold),
            'dice': lf.dice_coefficient(pair, threshold),
            'counts': lf.overlap_counts(pair, threshold)}


def evaluate(model, params, dataset, chunk_size, loss_kind,
             from_logits= True, smoothing= lf.DICE_SMOOTHING,
             threshold= lf.METRIC_THRESHOLD):
    '''
        eval-mode pass over the whole dataset in chunks of chunk_size;
        loss is the sample-weighted mean, metrics cover every sample
    '''
    losses = []
    outputs = []
    n = len(dataset)
    for start in range(0, n, chunk_size):
        chunk = dataset.batch(np.arange(start, min(start + chunk_size, n)))
        output, _ = ag.forward(model, params, chunk.inputs, 'eval')
        loss = lf.mean_loss(loss_kind, output, chunk.targets,
                            from_logits= from_logits, smoothing= smoothing)
        losses.append(loss.value * len(chunk) / n)
        outputs.append(output.data)
    metrics = batch_metrics(dataset.task, np.concatenate(outputs, axis= 0),
                            dataset.targets, from_logits, threshold)
    result = {'loss': float(sum(losses))}
    if dataset.task == 'classification':
        result['accuracy'] = metrics['accuracy']
    else:
        pooled = lf.pooled_scores(metrics['counts'])
        result.update({'iou': metrics['iou'], 'dice': metrics['dice'],
                       'iou_micro': pooled['iou'],
                       'dice_micro': pooled['dice']})
    return result


#######################  one epoch  ###################################

@dataclass
class EpochStats:
    epoch: int
    mini_batches: list = field(default_factory= list)
    # per mini-batch metric dicts, same order as mini_batches
    metrics: list = field(default_factory= list)
    mean_loss: float = 0.0
    step_count: int = 0

    @property
    def losses(self):
        return [stats.loss for stats in self.mini_batches]


def epoch_order(seed, epoch, n_samples):
    return hp.substream(seed, 'shuffle', epoch).permutation(n_samples)


def train_epoch(model, params, dataset, mini_batch_size, n_mu, mode,
                loss_kind, optimizer_state, seed= 0, epoch= 0,
                schedule= None, from_logits= True,
                smoothing= lf.DICE_SMOOTHING, fold_into_seed= False,
                prefetch= False, threshold= lf.METRIC_THRESHOLD):
    '''
        one pass over the dataset in a seeded shuffled order;
        the last mini-batch may be short and gets its own plan
    '''
    n = len(dataset)
    if n == 0:
        raise ValueError('dataset is empty')
    if mini_batch_size < 1:
        raise ValueError('mini_batch_size must be positive')

    order = epoch_order(seed, epoch, n)
    stats = EpochStats(epoch= epoch)
    weighted = 0.0
    for start in range(0, n, mini_batch_size):
        batch = dataset.batch(order[start:start + mini_batch_size])
        plan = plan_split(len(batch), n_mu)
        if schedule is not None:
            optimizer_state.lr = schedule.lr_at(optimizer_state.step_count,
                                                epoch)
        _, mini = train_mini_batch(model, params, batch, plan, mode,
                                   loss_kind, optimizer_state,
                                   from_logits= from_logits,
                                   smoothing= smoothing,
                                   fold_into_seed= fold_into_seed,
                                   prefetch= prefetch)
        stats.mini_batches.append(mini)
        stats.metrics.append(batch_metrics(dataset.task, mini.outputs,
                                           batch.targets, from_logits,
                                           threshold))
        # outputs are only needed for the metrics
        mini.outputs = None
        weighted += mini.loss * len(batch)
    stats.mean_loss = weighted / n
    stats.step_count = optimizer_state.step_count
    return stats
