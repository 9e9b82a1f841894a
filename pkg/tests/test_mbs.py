import numpy as np
import pytest

import func_module.autograd_func as ag
import func_module.data_func as dt
import func_module.errors_func as er
import func_module.helper_func as hp
import func_module.loss_func as lf
import func_module.mbs_func as mb
import func_module.optim_func as op

from tests.model_gen import random_batch, random_model


def _full_gradient(model, params, batch, loss_kind= 'mse'):
    output, tape = ag.forward(model, params, batch.inputs)
    return ag.backward(tape, lf.mean_loss(loss_kind, output, batch.targets))


def _equal_split(rng, n_b):
    divisors = [d for d in range(1, n_b + 1) if n_b % d == 0]
    return divisors[int(rng.integers(0, len(divisors)))]


#######################  plan_split  ##################################

@pytest.mark.parametrize('n_b, n_mu, sizes', [
    (32, 8, (8, 8, 8, 8)),
    (10, 8, (8, 2)),
    (5, 16, (5,)),
    (1, 1, (1,)),
])
def test_plan_split(n_b, n_mu, sizes):
    plan = mb.plan_split(n_b, n_mu)
    assert plan.sizes == sizes
    assert plan.n_s_mu == len(sizes)
    assert sum(plan.sizes) == n_b
    assert plan.index_ranges[0][0] == 0
    assert plan.index_ranges[-1][1] == n_b


def test_plan_split_clamps_micro_batch_size():
    assert mb.plan_split(5, 16).n_mu == 5


@pytest.mark.parametrize('n_b, n_mu', [(0, 4), (4, 0), (-1, 2)])
def test_plan_split_rejects_non_positive_sizes(n_b, n_mu):
    with pytest.raises(ValueError):
        mb.plan_split(n_b, n_mu)


def test_plan_ranges_are_contiguous():
    plan = mb.plan_split(23, 5)
    for (_, stop), (start, _) in zip(plan.index_ranges,
                                     plan.index_ranges[1:]):
        assert stop == start


#######################  normalization  ###############################

def test_normalization_factors():
    plan = mb.plan_split(10, 8)
    assert mb.normalization_factor(plan, 1, 'paper_faithful') == 0.5
    assert mb.normalization_factor(plan, 0, 'exact_weighted') == 0.8
    assert mb.normalization_factor(plan, 1, 'exact_weighted') == 0.2
    assert mb.normalization_factor(plan, 1, 'off') == 1.0


def test_normalization_factor_index_out_of_plan():
    with pytest.raises(IndexError):
        mb.normalization_factor(mb.plan_split(4, 2), 2, 'paper_faithful')


def test_normalize_loss_divides_by_micro_batch_count():
    loss = lf.LossValue(3.0, 2, 'mse', np.ones((2, 1)))
    normed = mb.normalize_loss(loss, mb.plan_split(8, 2), 0, 'paper_faithful')
    assert normed.value == 0.75
    np.testing.assert_array_equal(normed.output_grad, np.full((2, 1), 0.25))


#######################  accumulation  ################################

def test_accumulate_past_the_plan_raises():
    params, _ = ag.build_model(ag.ModelSpec(layers= [ag.Dense(2, 1)]),
                               (2,), seed= 0)
    acc = mb.GradientAccumulator.start(params, mb.plan_split(2, 1))
    zeros = ag.GradientSet.zeros_like(params)
    mb.accumulate(acc, zeros)
    mb.accumulate(acc, zeros)
    with pytest.raises(er.AccumulationError):
        mb.accumulate(acc, zeros)


def test_accumulate_checks_keys():
    params, _ = ag.build_model(ag.ModelSpec(layers= [ag.Dense(2, 1)]),
                               (2,), seed= 0)
    acc = mb.GradientAccumulator.start(params, mb.plan_split(2, 1))
    with pytest.raises(er.KeyMismatchError):
        mb.accumulate(acc, ag.GradientSet({'0.weight': np.zeros((1, 2))}))


def test_accumulated_gradient_equals_full_batch_gradient():
    rng = np.random.default_rng(101)
    worst = 0.0
    for trial in range(100):
        spec, input_shape = random_model(rng)
        params, model = ag.build_model(spec, input_shape, seed= trial)
        n_b = int(rng.integers(4, 65))
        batch = random_batch(rng, model, n_b)
        plan = mb.plan_split(n_b, _equal_split(rng, n_b))
        acc, _ = mb.accumulate_mini_batch(model, params, batch, plan,
                                          'paper_faithful', 'mse')
        full = _full_gradient(model, params, batch)
        worst = max(worst, hp.max_relative_error_sets(acc.sums, full))
    assert worst <= 1e-10


def test_unnormalized_accumulation_scales_with_micro_batch_count():
    rng = np.random.default_rng(202)
    for trial in range(100):
        spec, input_shape = random_model(rng)
        params, model = ag.build_model(spec, input_shape, seed= trial)
        n_b = int(rng.integers(4, 65))
        batch = random_batch(rng, model, n_b)
        plan = mb.plan_split(n_b, _equal_split(rng, n_b))
        acc, _ = mb.accumulate_mini_batch(model, params, batch, plan,
                                          'off', 'mse')
        full = _full_gradient(model, params, batch).scaled(plan.n_s_mu)
        assert hp.max_relative_error_sets(acc.sums, full) <= 1e-10


def _ragged_setup():
    '''
        w x with 8 inputs of 1 then 2 inputs of 10, targets 0:
        the two micro-batches of plan (10, 8) have very different means
    '''
    spec = ag.ModelSpec(layers= [ag.Dense(1, 1, bias= False)])
    params, model = ag.build_model(spec, (1,), seed= 0)
    params['0.weight'].data[...] = 0.5
    inputs = np.array([[1.0]] * 8 + [[10.0]] * 2)
    batch = dt.Batch(inputs, np.zeros((10, 1)))
    return params, model, batch, mb.plan_split(10, 8)


def test_ragged_split_exact_weighted_matches_full_batch():
    params, model, batch, plan = _ragged_setup()
    acc, _ = mb.accumulate_mini_batch(model, params, batch, plan,
                                      'exact_weighted', 'mse')
    full = _full_gradient(model, params, batch)
    assert hp.max_relative_error_sets(acc.sums, full) <= 1e-10


def test_ragged_split_paper_faithful_deviates():
    params, model, batch, plan = _ragged_setup()
    acc, _ = mb.accumulate_mini_batch(model, params, batch, plan,
                                      'paper_faithful', 'mse')
    full = _full_gradient(model, params, batch)
    assert hp.max_relative_error_sets(acc.sums, full) > 1e-6


def test_folding_into_the_seed_equals_scaling_the_loss():
    rng = np.random.default_rng(9)
    spec, input_shape = random_model(rng)
    params, model = ag.build_model(spec, input_shape, seed= 9)
    batch = random_batch(rng, model, 12)
    plan = mb.plan_split(12, 5)
    scaled, scaled_stats = mb.accumulate_mini_batch(
        model, params, batch, plan, 'exact_weighted', 'mse')
    folded, folded_stats = mb.accumulate_mini_batch(
        model, params, batch, plan, 'exact_weighted', 'mse',
        fold_into_seed= True)
    assert hp.max_relative_error_sets(folded.sums, scaled.sums) <= 1e-12
    assert folded_stats.micro_losses == scaled_stats.micro_losses


def test_mini_batch_loss_is_the_sample_weighted_mean():
    params, model, batch, plan = _ragged_setup()
    _, stats = mb.accumulate_mini_batch(model, params, batch, plan,
                                        'paper_faithful', 'mse')
    # per-sample losses 0.25 (eight) and 25 (two)
    assert stats.micro_losses == [0.25, 25.0]
    assert stats.loss == pytest.approx((8 * 0.25 + 2 * 25.0) / 10)


def test_batch_of_wrong_size_for_plan():
    params, model, batch, _ = _ragged_setup()
    with pytest.raises(er.ShapeError):
        mb.accumulate_mini_batch(model, params, batch, mb.plan_split(9, 3),
                                 'off', 'mse')


#######################  deferred update  #############################

@pytest.mark.parametrize('n_mu', [1, 3, 8, 16])
def test_one_optimizer_step_per_mini_batch(n_mu):
    spec = ag.ModelSpec(layers= [ag.Dense(4, 3)])
    dataset = dt.gen_synthetic_classification(
        dt.DatasetSpec(n_samples= 40, input_shape= (4,), n_classes= 3),
        seed= 1)
    params, model = ag.build_model(spec, (4,), seed= 1)
    state = op.make_state('sgd', params)
    stats = mb.train_epoch(model, params, dataset, 16, n_mu,
                           'paper_faithful', 'cross_entropy', state,
                           seed= 1, epoch= 0)
    # 40 samples: mini-batches of 16, 16, 8
    assert state.step_count == 3
    assert [mini.step_count for mini in stats.mini_batches] == [1, 2, 3]


#######################  worked example  ##############################

def _unit_linear():
    spec = ag.ModelSpec(layers= [ag.Dense(1, 1, bias= False)])
    params, model = ag.build_model(spec, (1,), seed= 0)
    params['0.weight'].data[...] = 1.0
    batch = dt.Batch(np.array([[1.0], [2.0], [3.0], [4.0]]),
                     np.array([[2.0], [3.0], [5.0], [4.0]]))
    return params, model, batch


def test_worked_example_micro_batch_gradients():
    params, model, batch = _unit_linear()
    plan = mb.plan_split(4, 2)
    per_micro = []
    for k, (start, stop) in enumerate(plan.index_ranges):
        micro = batch.slice(start, stop)
        output, tape = ag.forward(model, params, micro.inputs)
        loss = lf.mean_loss('mse', output, micro.targets)
        grads = ag.backward(tape, mb.normalize_loss(loss, plan, k,
                                                    'paper_faithful'))
        per_micro.append(float(grads['0.weight'][0, 0]))
    # residuals w x - y: -1, -1 | -2, 0
    assert per_micro == [-1.5, -3.0]

    acc, _ = mb.accumulate_mini_batch(model, params, batch, plan,
                                      'paper_faithful', 'mse')
    assert acc.sums['0.weight'][0, 0] == -4.5
    assert _full_gradient(model, params, batch)['0.weight'][0, 0] == -4.5

    acc, _ = mb.accumulate_mini_batch(model, params, batch, plan, 'off',
                                      'mse')
    assert acc.sums['0.weight'][0, 0] == -9.0


def test_worked_example_single_update():
    params, model, batch = _unit_linear()
    state = op.make_state('sgd', params, lr= 0.1, momentum= 0.0,
                          weight_decay= 0.0)
    mb.train_mini_batch(model, params, batch, mb.plan_split(4, 2),
                        'paper_faithful', 'mse', state)
    assert state.step_count == 1
    assert params['0.weight'].data[0, 0] == pytest.approx(1.45, abs= 1e-15)


@pytest.mark.parametrize('n_mu, plans', [
    (16, [(16,), (16,), (1,)]),
    (5, [(5, 5, 5, 1), (5, 5, 5, 1), (1,)]),
])
def test_epoch_with_a_one_sample_remainder(n_mu, plans):
    dataset = dt.gen_synthetic_classification(
        dt.DatasetSpec(n_samples= 33, input_shape= (4,), n_classes= 3),
        seed= 3)
    params, model = ag.build_model(ag.ModelSpec(layers= [ag.Dense(4, 3)]),
                                   (4,), seed= 3)
    state = op.make_state('sgd', params)
    stats = mb.train_epoch(model, params, dataset, 16, n_mu,
                           'paper_faithful', 'cross_entropy', state,
                           seed= 3, epoch= 0)
    assert [mini.plan.sizes for mini in stats.mini_batches] == plans
    assert [mini.plan.n_b for mini in stats.mini_batches] == [16, 16, 1]
    assert stats.mini_batches[-1].plan.n_s_mu == 1
    assert state.step_count == 3
    assert stats.step_count == 3
    assert np.isfinite(stats.mean_loss)


def test_prefetch_gives_bit_identical_results():
    rng = np.random.default_rng(33)
    spec, input_shape = random_model(rng)
    batch = None
    results = []
    for prefetch in (False, True):
        params, model = ag.build_model(spec, input_shape, seed= 33)
        if batch is None:
            batch = random_batch(rng, model, 20)
        state = op.make_state('adam', params)
        for _ in range(3):
            mb.train_mini_batch(model, params, batch, mb.plan_split(20, 3),
                                'paper_faithful', 'mse', state,
                                prefetch= prefetch)
        results.append(params)
    for name in results[0]:
        np.testing.assert_array_equal(results[0][name].data,
                                      results[1][name].data)


def test_batchnorm_under_mbs_differs_from_full_batch():
    spec = ag.ModelSpec(layers= [ag.Dense(3, 4), ag.BatchNorm(4),
                                 ag.Dense(4, 2)])
    rng = np.random.default_rng(4)
    batch = dt.Batch(rng.normal(size= (8, 3)), rng.normal(size= (8, 2)))

    params, model = ag.build_model(spec, (3,), seed= 4)
    full, _ = ag.forward(model, params, batch.inputs, 'train')
    params, model = ag.build_model(spec, (3,), seed= 4)
    _, stats = mb.accumulate_mini_batch(model, params, batch,
                                        mb.plan_split(8, 2),
                                        'exact_weighted', 'mse')
    assert np.max(np.abs(stats.outputs - full.data)) > 0.0


#######################  epochs and evaluation  #######################

def test_epoch_order_depends_on_seed_and_epoch():
    first = mb.epoch_order(1, 0, 50)
    assert np.array_equal(first, mb.epoch_order(1, 0, 50))
    assert not np.array_equal(first, mb.epoch_order(1, 1, 50))
    assert sorted(first.tolist()) == list(range(50))


def test_evaluate_classification_reports_loss_and_accuracy():
    dataset = dt.gen_synthetic_classification(
        dt.DatasetSpec(n_samples= 30, input_shape= (4,), n_classes= 3),
        seed= 2)
    params, model = ag.build_model(ag.ModelSpec(layers= [ag.Dense(4, 3)]),
                                   (4,), seed= 2)
    result = mb.evaluate(model, params, dataset, 7, 'cross_entropy')
    assert set(result) == {'loss', 'accuracy'}
    output, _ = ag.forward(model, params, dataset.inputs, 'eval')
    whole = lf.mean_loss('cross_entropy', output, dataset.targets)
    assert result['loss'] == pytest.approx(whole.value, rel= 1e-12)


def test_evaluate_segmentation_reports_both_averages():
    dataset = dt.gen_synthetic_segmentation(
        dt.DatasetSpec(kind= 'synthetic_segmentation', n_samples= 6,
                       input_shape= (1, 6, 6), mask_shape= (6, 6)),
        seed= 3)
    spec = ag.ModelSpec(layers= [ag.Conv2d(1, 1, 3, padding= 1)])
    params, model = ag.build_model(spec, (1, 6, 6), seed= 3)
    result = mb.evaluate(model, params, dataset, 4, 'bce_dice')
    assert set(result) == {'loss', 'iou', 'dice', 'iou_micro', 'dice_micro'}
    assert all(0.0 <= result[key] <= 1.0
               for key in ('iou', 'dice', 'iou_micro', 'dice_micro'))
