'''
   parameter updates from an accumulated gradient

   weight decay is coupled (added to the gradient) for both optimizers
   step_count moves by exactly one per update, which is what the
   deferred-update checks in mbs_func count

   access these values in other modules by
        import func_module.optim_func as op
'''

from dataclasses import dataclass, field

import numpy as np

import func_module.errors_func as er

OPTIMIZER_KINDS = ('sgd', 'adam')
LR_SCHEDULES = ('none', 'linear')
SCHEDULE_UNITS = ('update', 'epoch')

# extra per-parameter state tensors each optimizer keeps
STATE_MULTIPLIER = {'sgd': 1, 'adam': 2}


@dataclass
class OptimizerState:
    kind: str = 'sgd'
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # velocity (sgd) or first moment (adam)
    first: dict = field(default_factory= dict)
    # second moment (adam)
    second: dict = field(default_factory= dict)
    step_count: int = 0

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(
                f'optimizer kind must be one of {OPTIMIZER_KINDS}, '
                f'got {self.kind}')
        if self.lr <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError('lr must be positive, momentum and '
                             'weight_decay non-negative')


def make_state(kind, params, **hyper):
    '''
        fresh state with zeroed state tensors for every parameter
    '''
    state = OptimizerState(kind= kind, **hyper)
    state.first = {name: np.zeros_like(value.data)
                   for name, value in params.items()}
    if kind == 'adam':
        state.second = {name: np.zeros_like(value.data)
                        for name, value in params.items()}
    return state


def _check_keys(params, grads):
    if set(params.keys()) != set(grads.keys()):
        raise er.KeyMismatchError(
            f'gradients {sorted(grads.keys())} do not match '
            f'parameters {sorted(params.keys())}')
    for name, value in params.items():
        if grads[name].shape != value.shape:
            raise er.KeyMismatchError(
                f'gradient {name} has shape {grads[name].shape}, '
                f'parameter has {value.shape}')


def _state_tensor(store, name, like):
    if name not in store:
        store[name] = np.zeros_like(like)
    return store[name]


def sgd_step(params, grads, state):
    '''
        g' = g + weight_decay * w
        v  = momentum * v + g'
        w  = w - lr * v
    '''
    _check_keys(params, grads)
    for name, value in params.items():
        grad = grads[name]
        if state.weight_decay != 0.0:
            grad = grad + state.weight_decay * value.data
        velocity = _state_tensor(state.first, name, value.data)
        velocity *= state.momentum
        velocity += grad
        value.data -= state.lr * velocity
    state.step_count += 1
    return params, state


def adam_step(params, grads, state):
    '''
        bias-corrected first/second moments; decay added to the gradient
    '''
    _check_keys(params, grads)
    step = state.step_count + 1
    beta1, beta2 = state.adam_beta1, state.adam_beta2
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    for name, value in params.items():
        grad = grads[name]
        if state.weight_decay != 0.0:
            grad = grad + state.weight_decay * value.data
        first = _state_tensor(state.first, name, value.data)
        second = _state_tensor(state.second, name, value.data)
        first *= beta1
        first += (1.0 - beta1) * grad
        second *= beta2
        second += (1.0 - beta2) * grad * grad
        first_hat = first / correction1
        second_hat = second / correction2
        value.data -= state.lr * first_hat / (np.sqrt(second_hat)
                                              + state.adam_eps)
    state.step_count = step
    return params, state


def apply_update(params, grads, state):
    if state.kind == 'adam':
        return adam_step(params, grads, state)
    return sgd_step(params, grads, state)


def linear_lr(initial_lr, step, total_steps):
    '''
        initial_lr * (1 - step / total_steps), never negative
    '''
    if total_steps <= 0:
        raise ValueError('total_steps must be positive')
    if not 0 <= step <= total_steps:
        raise ValueError(f'step {step} outside [0, {total_steps}]')
    return max(0.0, initial_lr * (1.0 - step / total_steps))


@dataclass
class LrSchedule:
    '''
        linear decay counted per optimizer update or per epoch
    '''
    initial_lr: float
    kind: str = 'none'
    unit: str = 'update'
    total_updates: int = 1
    total_epochs: int = 1

    def lr_at(self, update_index, epoch_index):
        if self.kind == 'none':
            return self.initial_lr
        if self.unit == 'epoch':
            return linear_lr(self.initial_lr,
                             min(epoch_index, self.total_epochs),
                             self.total_epochs)
        return linear_lr(self.initial_lr,
                         min(update_index, self.total_updates),
                         self.total_updates)
