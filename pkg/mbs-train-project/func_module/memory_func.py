'''
   simulated device memory: the model parameter space (parameters,
   gradients, optimizer state) and the data space (input batch plus
   every intermediate the tape keeps), against a fixed capacity

   byte counts are analytic, derived from layer shapes, so a
   "Failed" configuration is reproducible on any machine

   access these values in other modules by
        import func_module.memory_func as mm
'''

from dataclasses import dataclass

import polars as pl

import func_module.autograd_func as ag
import func_module.errors_func as er
import func_module.optim_func as op

FAILED = 'Failed'


@dataclass(frozen= True)
class MemoryBudget:
    capacity_bytes: int
    param_bytes: int
    data_bytes_per_sample: int
    fixed_overhead_bytes: int = 0

    def required_bytes(self, n_samples):
        return self.param_bytes + self.fixed_overhead_bytes \
            + n_samples * self.data_bytes_per_sample

    def fits(self, n_samples):
        return self.required_bytes(n_samples) <= self.capacity_bytes


def estimate_memory(model_spec, input_shape, optimizer_kind,
                    capacity_bytes= 0, fixed_overhead_bytes= 0):
    '''
        param_bytes = 8 * n_params * (params + grads + optimizer state)
        data_bytes_per_sample = 8 * elements the tape retains per sample
    '''
    if optimizer_kind not in op.STATE_MULTIPLIER:
        raise ValueError(f'unknown optimizer kind {optimizer_kind}')
    n_params = ag.count_parameters(model_spec, input_shape)
    copies = 2 + op.STATE_MULTIPLIER[optimizer_kind]
    model = ag.Model(spec= model_spec,
                     input_shape= tuple(int(dim) for dim in input_shape),
                     layer_shapes= ag.trace_shapes(model_spec, input_shape))
    per_sample = ag.retained_elements_per_sample(model)
    return MemoryBudget(
        capacity_bytes= int(capacity_bytes),
        param_bytes= ag.BYTES_PER_ELEMENT * n_params * copies,
        data_bytes_per_sample= ag.BYTES_PER_ELEMENT * per_sample,
        fixed_overhead_bytes= int(fixed_overhead_bytes))


def fit_micro_batch(budget):
    '''
        largest n with param + overhead + n * per_sample <= capacity
        raises ModelDoesNotFitError when n = 1 does not fit
    '''
    if budget.data_bytes_per_sample <= 0:
        raise ValueError('data_bytes_per_sample must be positive')
    free = budget.capacity_bytes - budget.param_bytes \
        - budget.fixed_overhead_bytes
    if free < budget.data_bytes_per_sample:
        raise er.ModelDoesNotFitError(budget.required_bytes(1),
                                      budget.capacity_bytes)
    return free // budget.data_bytes_per_sample


def fit_table(budget, mini_batch_sizes):
    '''
        one row per mini-batch size: does it fit without MBS,
        and the micro-batch size MBS would stream
    '''
    max_mu = fit_micro_batch(budget)
    rows = []
    for size in mini_batch_sizes:
        rows.append({'mini_batch_size': size,
                     'required_bytes': budget.required_bytes(size),
                     'without_mbs': 'fits' if budget.fits(size) else FAILED,
                     'micro_batch_size': min(size, max_mu),
                     'micro_batches': -(-size // min(size, max_mu))})
    return pl.DataFrame(rows, schema= {'mini_batch_size': pl.Int64,
                                       'required_bytes': pl.Int64,
                                       'without_mbs': pl.String,
                                       'micro_batch_size': pl.Int64,
                                       'micro_batches': pl.Int64})
