'''
   dense-tensor forward pass and reverse-mode gradients for small
   feed-forward and convolutional models

   a model is an ordered list of layer descriptors; forward records
   every intermediate that backward needs on a Tape, and backward
   walks the tape in reverse from the loss gradient

   all arrays are 64-bit floats

   access these values in other modules by
        import func_module.autograd_func as ag
'''

from dataclasses import dataclass, field
from math import prod, sqrt
from typing import ClassVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

import func_module.errors_func as er
import func_module.helper_func as hp

DTYPE = np.float64
BYTES_PER_ELEMENT = 8

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1

MODES = ('train', 'eval')


@dataclass
class Tensor:
    '''
        n-dimensional float64 value array
        shape is the numpy shape; data is stored row-major
    '''
    data: np.ndarray
    grad_required: bool = True

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype= DTYPE)

    @property
    def shape(self):
        return tuple(self.data.shape)

    def copy(self):
        return Tensor(self.data.copy(), self.grad_required)


class ParameterSet(dict):
    '''
        ordered name -> Tensor, in the order build_model created them
    '''

    def copy(self):
        return ParameterSet((name, value.copy())
                            for name, value in self.items())

    def n_elements(self):
        return sum(value.data.size for value in self.values())


class GradientSet(dict):
    '''
        name -> float64 array with the shape of the named parameter
    '''

    @classmethod
    def zeros_like(cls, params):
        return cls((name, np.zeros_like(value.data))
                   for name, value in params.items())

    def copy(self):
        return GradientSet((name, grad.copy())
                           for name, grad in self.items())

    def scaled(self, factor):
        return GradientSet((name, grad * factor)
                           for name, grad in self.items())

    def norm(self):
        return sqrt(sum(float(np.sum(grad * grad))
                        for grad in self.values()))

    def check_matches(self, params):
        if list(self.keys()) != list(params.keys()):
            raise er.KeyMismatchError(
                f'gradient keys {sorted(self.keys())} do not match '
                f'parameter names {sorted(params.keys())}')
        for name, value in params.items():
            if self[name].shape != value.shape:
                raise er.KeyMismatchError(
                    f'gradient {name} has shape {self[name].shape}, '
                    f'parameter has {value.shape}')


#######################  layer descriptors  ###########################

# each descriptor knows its output shape, its parameter shapes,
# how to run forward/backward on a batch and how many elements per
# sample its tape record keeps alive


def _window_slice(start, count, stride):
    return slice(start, start + stride * (count - 1) + 1, stride)


@dataclass(frozen= True)
class Dense:
    n_in: int
    n_out: int
    bias: bool = True

    kind: ClassVar[str] = 'dense'
    config_fields: ClassVar[tuple] = (('in', 'n_in', int),
                                      ('out', 'n_out', int),
                                      ('bias', 'bias', bool))
    # the tape record is the layer input itself
    caches_input: ClassVar[bool] = True

    def out_shape(self, in_shape, index):
        if tuple(in_shape) != (self.n_in,):
            raise er.ShapeError(
                f'dense expects input ({self.n_in},), got {tuple(in_shape)}',
                layer_index= index)
        return (self.n_out,)

    def param_shapes(self, in_shape):
        shapes = {'weight': (self.n_out, self.n_in)}
        if self.bias:
            shapes['bias'] = (self.n_out,)
        return shapes

    def fan_in(self, in_shape):
        return self.n_in

    def forward(self, x, p, buffers, train):
        out = x @ p['weight'].T
        if self.bias:
            out = out + p['bias']
        return out, x

    def backward(self, dout, cache, p):
        x = cache
        grads = {'weight': dout.T @ x}
        if self.bias:
            grads['bias'] = dout.sum(axis= 0)
        return dout @ p['weight'], grads

    def retained_per_sample(self, in_shape):
        return prod(in_shape)


@dataclass(frozen= True)
class Conv2d:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    padding: int = 0

    kind: ClassVar[str] = 'conv2d'
    config_fields: ClassVar[tuple] = (('in_ch', 'in_ch', int),
                                      ('out_ch', 'out_ch', int),
                                      ('kernel', 'kernel', int),
                                      ('stride', 'stride', int),
                                      ('padding', 'padding', int))

    def out_shape(self, in_shape, index):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise er.ShapeError(
                f'conv2d expects input ({self.in_ch}, H, W), '
                f'got {tuple(in_shape)}', layer_index= index)
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise er.ShapeError(
                'conv2d needs kernel >= 1, stride >= 1, padding >= 0',
                layer_index= index)
        _, height, width = in_shape
        out_h = (height + 2 * self.padding - self.kernel) // self.stride + 1
        out_w = (width + 2 * self.padding - self.kernel) // self.stride + 1
        if out_h < 1 or out_w < 1:
            raise er.ShapeError(
                f'conv2d kernel {self.kernel} larger than padded input '
                f'{tuple(in_shape)}', layer_index= index)
        return (self.out_ch, out_h, out_w)

    def param_shapes(self, in_shape):
        return {'weight': (self.out_ch, self.in_ch, self.kernel, self.kernel),
                'bias': (self.out_ch,)}

    def fan_in(self, in_shape):
        return self.in_ch * self.kernel * self.kernel

    def _windows(self, xp):
        win = sliding_window_view(xp, (self.kernel, self.kernel),
                                  axis= (2, 3))
        return win[:, :, ::self.stride, ::self.stride]

    def forward(self, x, p, buffers, train):
        pad = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        out = np.einsum('nchwij,ocij->nohw', self._windows(xp), p['weight'])
        out = out + p['bias'][None, :, None, None]
        return out, (xp, x.shape)

    def backward(self, dout, cache, p):
        xp, x_shape = cache
        weight = p['weight']
        grads = {
            'weight': np.einsum('nohw,nchwij->ocij', dout, self._windows(xp)),
            'bias': dout.sum(axis= (0, 2, 3))}

        # scatter each kernel tap back onto the padded input
        out_h, out_w = dout.shape[2], dout.shape[3]
        dxp = np.zeros_like(xp)
        for i in range(self.kernel):
            rows = _window_slice(i, out_h, self.stride)
            for j in range(self.kernel):
                cols = _window_slice(j, out_w, self.stride)
                dxp[:, :, rows, cols] += np.einsum('nohw,oc->nchw',
                                                   dout, weight[:, :, i, j])
        pad = self.padding
        dx = dxp[:, :, pad:pad + x_shape[2], pad:pad + x_shape[3]]
        return dx, grads

    def retained_per_sample(self, in_shape):
        channels, height, width = in_shape
        return channels * (height + 2 * self.padding) \
                        * (width + 2 * self.padding)


@dataclass(frozen= True)
class ReLU:
    kind: ClassVar[str] = 'relu'
    config_fields: ClassVar[tuple] = ()

    def out_shape(self, in_shape, index):
        return tuple(in_shape)

    def param_shapes(self, in_shape):
        return {}

    def fan_in(self, in_shape):
        return 1

    def forward(self, x, p, buffers, train):
        # mask kept as float64, same element size the memory model charges
        mask = (x > 0).astype(DTYPE)
        return x * mask, mask

    def backward(self, dout, cache, p):
        return dout * cache, {}

    def retained_per_sample(self, in_shape):
        return prod(in_shape)


@dataclass(frozen= True)
class BatchNorm:
    features: int
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM

    kind: ClassVar[str] = 'batchnorm'
    config_fields: ClassVar[tuple] = (('features', 'features', int),
                                      ('epsilon', 'epsilon', float),
                                      ('momentum', 'momentum', float))

    def out_shape(self, in_shape, index):
        if len(in_shape) not in (1, 3) or in_shape[0] != self.features:
            raise er.ShapeError(
                f'batchnorm expects ({self.features},) or '
                f'({self.features}, H, W), got {tuple(in_shape)}',
                layer_index= index)
        return tuple(in_shape)

    def param_shapes(self, in_shape):
        return {'gamma': (self.features,), 'beta': (self.features,)}

    def buffer_shapes(self):
        return {'running_mean': (self.features,),
                'running_var': (self.features,)}

    def fan_in(self, in_shape):
        return 1

    def forward(self, x, p, buffers, train):
        return _batchnorm(x, p['gamma'], p['beta'], buffers,
                          'train' if train else 'eval',
                          self.epsilon, self.momentum)

    def backward(self, dout, cache, p):
        xhat, inv_std, axes, n, train = cache
        gamma = _per_feature(p['gamma'], dout.ndim)
        grads = {'gamma': (dout * xhat).sum(axis= axes),
                 'beta': dout.sum(axis= axes)}
        dxhat = dout * gamma
        if not train:
            return dxhat * inv_std, grads
        dx = (inv_std / n) * (n * dxhat
                              - dxhat.sum(axis= axes, keepdims= True)
                              - xhat * (dxhat * xhat).sum(axis= axes,
                                                          keepdims= True))
        return dx, grads

    def retained_per_sample(self, in_shape):
        return prod(in_shape)


@dataclass(frozen= True)
class Flatten:
    kind: ClassVar[str] = 'flatten'
    config_fields: ClassVar[tuple] = ()
    output_is_view: ClassVar[bool] = True

    def out_shape(self, in_shape, index):
        return (prod(in_shape),)

    def param_shapes(self, in_shape):
        return {}

    def fan_in(self, in_shape):
        return 1

    def forward(self, x, p, buffers, train):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache, p):
        return dout.reshape(cache), {}

    def retained_per_sample(self, in_shape):
        return 0


@dataclass(frozen= True)
class MaxPool2d:
    kernel: int
    stride: int | None = None

    kind: ClassVar[str] = 'maxpool2d'
    config_fields: ClassVar[tuple] = (('kernel', 'kernel', int),
                                      ('stride', 'stride', int))

    @property
    def step(self):
        return self.stride or self.kernel

    def out_shape(self, in_shape, index):
        if len(in_shape) != 3:
            raise er.ShapeError(
                f'maxpool2d expects (C, H, W), got {tuple(in_shape)}',
                layer_index= index)
        channels, height, width = in_shape
        out_h = (height - self.kernel) // self.step + 1
        out_w = (width - self.kernel) // self.step + 1
        if self.kernel < 1 or out_h < 1 or out_w < 1:
            raise er.ShapeError(
                f'maxpool2d kernel {self.kernel} does not fit '
                f'{tuple(in_shape)}', layer_index= index)
        return (channels, out_h, out_w)

    def param_shapes(self, in_shape):
        return {}

    def fan_in(self, in_shape):
        return 1

    def forward(self, x, p, buffers, train):
        win = sliding_window_view(x, (self.kernel, self.kernel),
                                  axis= (2, 3))[:, :, ::self.step, ::self.step]
        flat = win.reshape(*win.shape[:4], self.kernel * self.kernel)
        # argmax returns the first maximum: ties go to the lowest tap
        arg = flat.argmax(axis= -1)
        out = np.take_along_axis(flat, arg[..., None], axis= -1)[..., 0]
        return out, (arg, x.shape)

    def backward(self, dout, cache, p):
        arg, x_shape = cache
        dx = np.zeros(x_shape, dtype= DTYPE)
        out_h, out_w = dout.shape[2], dout.shape[3]
        for tap in range(self.kernel * self.kernel):
            i, j = divmod(tap, self.kernel)
            dx[:, :, _window_slice(i, out_h, self.step),
                     _window_slice(j, out_w, self.step)] += dout * (arg == tap)
        return dx, {}

    def retained_per_sample(self, in_shape):
        channels, height, width = in_shape
        out_h = (height - self.kernel) // self.step + 1
        out_w = (width - self.kernel) // self.step + 1
        return channels * out_h * out_w


LAYER_KINDS = {layer.kind: layer
               for layer in (Dense, Conv2d, ReLU, BatchNorm,
                             Flatten, MaxPool2d)}


#######################  batchnorm  ###################################

def _per_feature(values, ndim):
    '''
        (F,) -> broadcastable against (N, F) or (N, F, H, W)
    '''
    if ndim == 2:
        return values[None, :]
    return values[None, :, None, None]


def _batchnorm(x, gamma, beta, running_stats, mode, epsilon, momentum):
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    n = x.size // x.shape[1]
    if mode == 'train':
        mean = x.mean(axis= axes)
        var = x.var(axis= axes)
        # running variance tracks the unbiased estimate
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_stats['running_mean'][...] = \
            (1.0 - momentum) * running_stats['running_mean'] + momentum * mean
        running_stats['running_var'][...] = \
            (1.0 - momentum) * running_stats['running_var'] + momentum * unbiased
    else:
        mean = running_stats['running_mean']
        var = running_stats['running_var']
    inv_std = _per_feature(1.0 / np.sqrt(var + epsilon), x.ndim)
    xhat = (x - _per_feature(mean, x.ndim)) * inv_std
    out = _per_feature(gamma, x.ndim) * xhat + _per_feature(beta, x.ndim)
    return out, (xhat, inv_std, axes, n, mode == 'train')


def batchnorm_forward(x, gamma, beta, running_stats, mode,
                      epsilon= BN_EPSILON, momentum= BN_MOMENTUM):
    '''
        train mode normalizes by the statistics of this batch
        (under MBS: of this micro-batch) and updates running_stats
        in place; eval mode normalizes by running_stats
        running_stats: {'running_mean': (F,), 'running_var': (F,)}
    '''
    if mode not in MODES:
        raise ValueError(f'mode must be one of {MODES}, got {mode}')
    x = np.asarray(x, dtype= DTYPE)
    gamma = np.asarray(gamma, dtype= DTYPE)
    beta = np.asarray(beta, dtype= DTYPE)
    if x.ndim not in (2, 4) or x.shape[1] != gamma.shape[0] \
            or beta.shape != gamma.shape:
        raise er.ShapeError(
            f'batchnorm features {gamma.shape} do not match input {x.shape}')
    out, _ = _batchnorm(x, gamma, beta, running_stats, mode,
                        epsilon, momentum)
    return out


#######################  model  #######################################

@dataclass
class ModelSpec:
    layers: list


@dataclass
class Model:
    spec: ModelSpec
    input_shape: tuple
    # (input shape, output shape) of every layer, one sample
    layer_shapes: list
    buffers: dict = field(default_factory= dict)

    @property
    def output_shape(self):
        if not self.layer_shapes:
            return self.input_shape
        return self.layer_shapes[-1][1]


def trace_shapes(spec, input_shape):
    '''
        per-sample (input, output) shape of each layer
        raises ShapeError naming the first layer that does not compose
    '''
    shape = tuple(int(dim) for dim in input_shape)
    if len(shape) == 0 or any(dim < 1 for dim in shape):
        raise er.ShapeError(f'input shape {shape} needs positive dims')
    shapes = []
    for index, layer in enumerate(spec.layers):
        out = layer.out_shape(shape, index)
        shapes.append((shape, out))
        shape = out
    return shapes


def count_parameters(spec, input_shape):
    return sum(prod(param_shape)
               for layer, (in_shape, _) in zip(spec.layers,
                                               trace_shapes(spec, input_shape))
               for param_shape in layer.param_shapes(in_shape).values())


def build_model(spec, input_shape, seed):
    '''
        weights and biases ~ uniform(-sqrt(1/fan_in), +sqrt(1/fan_in))
        drawn in layer order from the seed's 'init' stream;
        batchnorm gamma = 1, beta = 0
        returns (ParameterSet, Model)
    '''
    layer_shapes = trace_shapes(spec, input_shape)
    rng = hp.substream(seed, 'init')
    params = ParameterSet()
    buffers = {}
    for index, (layer, (in_shape, _)) in enumerate(zip(spec.layers,
                                                        layer_shapes)):
        bound = sqrt(1.0 / layer.fan_in(in_shape))
        for name, shape in layer.param_shapes(in_shape).items():
            if name == 'gamma':
                values = np.ones(shape, dtype= DTYPE)
            elif name == 'beta':
                values = np.zeros(shape, dtype= DTYPE)
            else:
                values = rng.uniform(-bound, bound, size= shape)
            params[f'{index}.{name}'] = Tensor(values)
        if isinstance(layer, BatchNorm):
            buffers[f'{index}.running_mean'] = np.zeros(layer.features,
                                                        dtype= DTYPE)
            buffers[f'{index}.running_var'] = np.ones(layer.features,
                                                      dtype= DTYPE)
    model = Model(spec= spec,
                  input_shape= layer_shapes[0][0] if layer_shapes
                               else tuple(input_shape),
                  layer_shapes= layer_shapes,
                  buffers= buffers)
    return params, model


def _local(mapping, index, names):
    return {name: mapping[f'{index}.{name}'] for name in names}


def _local_params(params, index):
    prefix = f'{index}.'
    return {name[len(prefix):]: value.data
            for name, value in params.items()
            if name.startswith(prefix)}


#######################  forward / backward  ##########################

@dataclass
class Tape:
    '''
        intermediates of one forward pass, consumed by one backward
    '''
    model: Model
    params: ParameterSet
    records: list
    output: np.ndarray
    consumed: bool = False


def forward(model, params, inputs, mode= 'train'):
    '''
        run the batch through every layer
        returns (output Tensor, Tape)
    '''
    if mode not in MODES:
        raise ValueError(f'mode must be one of {MODES}, got {mode}')
    x = inputs.data if isinstance(inputs, Tensor) else inputs
    x = np.ascontiguousarray(x, dtype= DTYPE)
    if x.ndim < 1 or x.shape[0] < 1 \
            or tuple(x.shape[1:]) != tuple(model.input_shape):
        raise er.ShapeError(
            f'input shape {x.shape} does not match (batch, '
            f'{", ".join(str(dim) for dim in model.input_shape)})',
            layer_index= 0)

    train = mode == 'train'
    records = []
    for index, layer in enumerate(model.spec.layers):
        buffers = {}
        if isinstance(layer, BatchNorm):
            buffers = _local(model.buffers, index,
                             ('running_mean', 'running_var'))
        with np.errstate(over= 'ignore', invalid= 'ignore'):
            x, cache = layer.forward(x, _local_params(params, index),
                                     buffers, train)
        if not np.all(np.isfinite(x)):
            raise er.NumericOverflowError(
                f'{layer.kind} produced a non-finite value',
                layer_index= index)
        records.append((index, cache))
    return Tensor(x, grad_required= False), \
        Tape(model= model, params= params, records= records, output= x)


def backward(tape, loss, loss_grad_seed= 1.0):
    '''
        reverse-mode gradients of the scalar loss w.r.t. every
        parameter; loss.output_grad is dL/d(output), scaled by
        loss_grad_seed before it enters the last layer
        parameters with grad_required False get zeros
    '''
    if tape.consumed:
        raise er.TapeConsumedError('tape was already used by backward')
    if loss.output_grad is None \
            or loss.output_grad.shape != tape.output.shape:
        raise er.ShapeError(
            'loss gradient does not match the forward output shape')
    tape.consumed = True

    model, params = tape.model, tape.params
    grads = GradientSet.zeros_like(params)
    dout = loss.output_grad * loss_grad_seed
    for index, cache in reversed(tape.records):
        layer = model.spec.layers[index]
        dout, local_grads = layer.backward(dout, cache,
                                           _local_params(params, index))
        for name, grad in local_grads.items():
            full_name = f'{index}.{name}'
            if params[full_name].grad_required:
                grads[full_name] = grad
    tape.records = []
    return grads


def finite_difference_gradients(model, params, loss_fn, batch,
                                eps= 1e-6, mode= 'train'):
    '''
        central differences (L(w+eps) - L(w-eps)) / (2 eps), one
        scalar parameter at a time
        loss_fn(output array, targets) -> LossValue
        parameters and running statistics are restored on exit
    '''
    if eps <= 0:
        raise ValueError('eps must be positive')
    saved_buffers = {name: value.copy()
                     for name, value in model.buffers.items()}

    def loss_at():
        output, _ = forward(model, params, batch.inputs, mode)
        for name, value in saved_buffers.items():
            model.buffers[name][...] = value
        return loss_fn(output.data, batch.targets).value

    grads = GradientSet.zeros_like(params)
    for name, value in params.items():
        if not value.grad_required:
            continue
        flat = value.data.reshape(-1)
        out = grads[name].reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            try:
                flat[idx] = original + eps
                upper = loss_at()
                flat[idx] = original - eps
                lower = loss_at()
            finally:
                flat[idx] = original
            out[idx] = (upper - lower) / (2.0 * eps)
    return grads


def retained_elements_per_sample(model):
    '''
        elements per sample the forward pass keeps alive for backward:
        the input batch, each layer's tape record, the output
        a record that is the input batch (or a reshaped view of it)
        is already counted with the input
    '''
    total = prod(model.input_shape)
    sees_input = True
    for layer, (in_shape, _) in zip(model.spec.layers, model.layer_shapes):
        if not (sees_input and getattr(layer, 'caches_input', False)):
            total += layer.retained_per_sample(in_shape)
        sees_input = sees_input and getattr(layer, 'output_is_view', False)
    return total + prod(model.output_shape)
