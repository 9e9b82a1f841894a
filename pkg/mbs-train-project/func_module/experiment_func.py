'''
   the with-MBS vs without-MBS experiment harness

   run_experiment trains the configured model once per seed with MBS,
   and once more without MBS when the whole mini-batch fits the
   simulated device; a mini-batch that does not fit is recorded as
   "Failed" for the baseline

   a run directory holds
        config.txt            resolved config, re-runs bit-identically
        metrics.csv           MBS rows, one per mini-batch plus one per epoch
        baseline_metrics.csv  same rows without MBS (absent when Failed)
        timing.csv            wall-clock seconds per epoch
        summary.json          final / max metric, mean and std over seeds
        memory_report.csv     fit table of memory.report_mini_batch_sizes
        stream_schedule.csv   simulated schedule of one full mini-batch
        stream_summary.json   makespans and MBS overhead

   access these values in other modules by
        import func_module.experiment_func as ex
'''

import copy
import json
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from math import prod
from pathlib import Path

import paths as sp
import func_module.autograd_func as ag
import func_module.config_func as cf
import func_module.data_func as dt
import func_module.errors_func as er
import func_module.helper_func as hp
import func_module.loss_func as lf
import func_module.mbs_func as mb
import func_module.memory_func as mm
import func_module.optim_func as op
import func_module.report_func as rp
import func_module.stream_func as sf


#######################  resolution  ##################################

def memory_budget(config):
    return mm.estimate_memory(config.model.spec(), config.model.input_shape,
                              config.optim.kind,
                              capacity_bytes= config.memory.capacity_bytes,
                              fixed_overhead_bytes=
                                  config.memory.fixed_overhead_bytes)


def resolve_config(config):
    '''
        copy of config with micro_batch_size fixed:
        'auto' becomes the largest size that fits, capped at the
        mini-batch size; an explicit size must fit
        raises ModelDoesNotFitError when no micro-batch fits
    '''
    resolved = copy.deepcopy(config)
    budget = memory_budget(config)
    n_b = config.mbs.mini_batch_size
    if config.mbs.micro_batch_size is None:
        resolved.mbs.micro_batch_size = min(mm.fit_micro_batch(budget), n_b)
    else:
        n_mu = min(config.mbs.micro_batch_size, n_b)
        if not budget.fits(n_mu):
            raise er.ModelDoesNotFitError(budget.required_bytes(n_mu),
                                          budget.capacity_bytes)
        resolved.mbs.micro_batch_size = n_mu
    return resolved, budget


def transfer_bytes_per_sample(config):
    return ag.BYTES_PER_ELEMENT * prod(config.model.input_shape)


def new_run_dir(root, name):
    '''
        unique directory under root, named by run name and start time
    '''
    root = Path(root)
    root.mkdir(parents= True, exist_ok= True)
    stamp = datetime.now().strftime('%Y%m%d-%H%M%S')
    suffix = 0
    while True:
        tail = f'-{suffix}' if suffix else ''
        run_dir = root / f'{name}_{stamp}{tail}'
        try:
            run_dir.mkdir()
            return run_dir
        except FileExistsError:
            suffix += 1


#######################  one training run  ############################

@dataclass
class TrainResult:
    seed: int
    rows: list = field(default_factory= list)
    timing: list = field(default_factory= list)
    step_count: int = 0
    wall_seconds: float = 0.0
    epoch_losses: list = field(default_factory= list)


class MakespanCache:
    '''
        simulated makespan of one mini-batch, per (n_b, n_mu)
    '''

    def __init__(self, cost, bytes_per_sample, overlap):
        self.cost = cost
        self.bytes_per_sample = bytes_per_sample
        self.overlap = overlap
        self._seen = {}

    def __call__(self, plan):
        key = (plan.n_b, plan.n_mu)
        if key not in self._seen:
            self._seen[key] = sf.simulate_stream(
                plan, self.cost, self.bytes_per_sample,
                overlap= self.overlap).makespan
        return self._seen[key]


def _mini_batch_row(seed, epoch, index, stats, metrics, task, makespan):
    row = {'seed': seed, 'epoch': epoch, 'row_kind': 'mini_batch',
           'mini_batch_index': index, 'n_samples': stats.plan.n_b,
           'n_micro_batches': stats.plan.n_s_mu,
           'step_count': stats.step_count, 'lr': stats.lr,
           'loss': stats.loss, 'makespan_seconds': makespan}
    if task == 'classification':
        row['accuracy'] = metrics['accuracy']
    else:
        pooled = lf.pooled_scores(metrics['counts'])
        row.update({'iou': metrics['iou'], 'dice': metrics['dice'],
                    'iou_micro': pooled['iou'],
                    'dice_micro': pooled['dice']})
    return row


def train_run(config, dataset, n_mu, seed, makespan_of, run_label= 'mbs',
              mode= None):
    '''
        epochs of train_epoch from a fresh model; returns TrainResult
        with one metrics row per mini-batch and one per epoch
        mode defaults to the configured normalization mode
    '''
    mode = mode or config.mbs.normalization_mode
    params, model = ag.build_model(config.model.spec(),
                                   config.model.input_shape, seed)
    state = op.make_state(config.optim.kind, params, **config.optim.hyper())
    n_b = config.mbs.mini_batch_size
    per_epoch = -(-len(dataset) // n_b)
    schedule = op.LrSchedule(initial_lr= config.optim.lr,
                             kind= config.optim.lr_schedule,
                             unit= config.optim.schedule_unit,
                             total_updates= per_epoch * config.run.epochs,
                             total_epochs= config.run.epochs)
    result = TrainResult(seed= seed)
    for epoch in range(config.run.epochs):
        started = time.perf_counter()
        stats = mb.train_epoch(model, params, dataset, n_b, n_mu, mode,
                               config.loss.kind, state, seed= seed,
                               epoch= epoch, schedule= schedule,
                               from_logits= config.loss.from_logits,
                               smoothing= config.loss.dice_smoothing,
                               fold_into_seed= config.mbs.fold_into_seed,
                               prefetch= config.mbs.prefetch,
                               threshold= config.loss.metric_threshold)
        wall = time.perf_counter() - started

        makespan = 0.0
        for index, (mini, metrics) in enumerate(zip(stats.mini_batches,
                                                     stats.metrics)):
            seconds = makespan_of(mini.plan)
            makespan += seconds
            result.rows.append(_mini_batch_row(seed, epoch, index, mini,
                                               metrics, dataset.task,
                                               seconds))
        summary_row = {'seed': seed, 'epoch': epoch, 'row_kind': 'epoch',
                       'n_samples': len(dataset),
                       'n_micro_batches': sum(mini.plan.n_s_mu
                                              for mini in stats.mini_batches),
                       'step_count': stats.step_count, 'lr': state.lr,
                       'loss': stats.mean_loss,
                       'makespan_seconds': makespan}
        if config.run.eval_every_epoch:
            evaluated = mb.evaluate(model, params, dataset, n_b,
                                    config.loss.kind,
                                    from_logits= config.loss.from_logits,
                                    smoothing= config.loss.dice_smoothing,
                                    threshold= config.loss.metric_threshold)
            summary_row['eval_loss'] = evaluated.pop('loss')
            summary_row.update(evaluated)
        result.rows.append(summary_row)
        result.timing.append({'seed': seed, 'run': run_label,
                              'epoch': epoch, 'wall_seconds': wall})
        result.epoch_losses.append(stats.mean_loss)
        result.wall_seconds += wall
        result.step_count = stats.step_count
    return result


#######################  run_experiment  ##############################

def _seed_block(results, task, makespan_per_epoch):
    metric = rp.PRIMARY_METRIC[task]
    per_seed = []
    for result in results:
        df = rp.metrics_frame(result.rows, task).pipe(rp.typed_metrics)
        per_seed.append(rp.seed_summary(result.seed, df, metric,
                                        result.step_count,
                                        result.wall_seconds))
    return rp.aggregate_seeds(per_seed, makespan_per_epoch)


def _epoch_makespan(results):
    rows = [row for row in results[0].rows if row['row_kind'] == 'epoch']
    return rows[0]['makespan_seconds'] if rows else 0.0


def stream_reports(config, budget):
    '''
        schedule of one full mini-batch with MBS, the baseline
        schedule, and the overhead between them
    '''
    n_b = config.mbs.mini_batch_size
    cost = config.stream.cost_model()
    per_sample = transfer_bytes_per_sample(config)
    mbs_schedule = sf.simulate_stream(mb.plan_split(n_b,
                                                    config.mbs.micro_batch_size),
                                      cost, per_sample,
                                      overlap= config.stream.overlap)
    baseline_schedule = sf.simulate_stream(mb.plan_split(n_b, n_b), cost,
                                           per_sample,
                                           overlap= config.stream.overlap)
    report = sf.overhead_report(mbs_schedule, baseline_schedule,
                                baseline_fits= budget.fits(n_b))
    return mbs_schedule, baseline_schedule, report


def _report_sizes(config):
    sizes = set(config.memory.report_mini_batch_sizes)
    sizes.add(config.mbs.mini_batch_size)
    return sorted(sizes)


def run_experiment(config, verbose= False):
    '''
        train per config, write every run file, return the run directory
        raises ModelDoesNotFitError when not even one sample fits
    '''
    resolved, budget = resolve_config(config)
    n_b = resolved.mbs.mini_batch_size
    n_mu = resolved.mbs.micro_batch_size
    baseline_fits = budget.fits(n_b)
    root = sp.output_root(resolved.run.output_dir)
    run_dir = new_run_dir(root, resolved.run.name)
    cf.write_config(resolved, run_dir / sp.CONFIG_FILE)
    if verbose:
        hp.print_banner(f'Run {resolved.run.name}: mini-batch {n_b}, '
                        f'micro-batch {n_mu}',
                        f'baseline without MBS: '
                        f'{"fits" if baseline_fits else mm.FAILED}',
                        f'writing to: \n{run_dir}')

    cost = resolved.stream.cost_model()
    per_sample = transfer_bytes_per_sample(resolved)
    mbs_makespan = MakespanCache(cost, per_sample, resolved.stream.overlap)
    baseline_makespan = MakespanCache(cost, per_sample,
                                      resolved.stream.overlap)

    mbs_results = []
    baseline_results = []
    task = None
    for seed in resolved.seed_list():
        dataset = dt.load_dataset(resolved.dataset, seed)
        task = dataset.task
        mbs_results.append(train_run(resolved, dataset, n_mu, seed,
                                     mbs_makespan))
        if baseline_fits:
            # one micro-batch per mini-batch: every mode scales by 1
            baseline_results.append(train_run(
                resolved, dataset, n_b, seed, baseline_makespan,
                run_label= 'baseline',
                mode= mb.NormalizationMode.EXACT_WEIGHTED.value))
        if verbose:
            hp.print_banner(f'seed {seed}: final loss '
                            f'{mbs_results[-1].epoch_losses[-1]:.6g} with MBS')

    rp.write_metrics([row for result in mbs_results for row in result.rows],
                     task, run_dir / sp.METRICS_FILE)
    if baseline_results:
        rp.write_metrics([row for result in baseline_results
                          for row in result.rows],
                         task, run_dir / sp.BASELINE_METRICS_FILE)
    rp.write_timing([row for result in mbs_results + baseline_results
                     for row in result.timing],
                    run_dir / sp.TIMING_FILE)

    mm.fit_table(budget, _report_sizes(resolved))\
      .write_csv(run_dir / sp.MEMORY_REPORT_FILE)
    mbs_schedule, _, overhead = stream_reports(resolved, budget)
    mbs_schedule.to_frame().write_csv(run_dir / sp.STREAM_SCHEDULE_FILE)
    with (run_dir / sp.STREAM_SUMMARY_FILE).open('w') as f:
        json.dump({'overlap': resolved.stream.overlap,
                   'n_micro_batches': mb.plan_split(n_b, n_mu).n_s_mu,
                   **asdict(overhead)}, f, indent= 2)

    summary = {
        'name': resolved.run.name,
        'task': task,
        'metric': rp.PRIMARY_METRIC[task],
        'seeds': resolved.seed_list(),
        'epochs': resolved.run.epochs,
        'mini_batch_size': n_b,
        'micro_batch_size': n_mu,
        'n_micro_batches': mb.plan_split(n_b, n_mu).n_s_mu,
        'normalization_mode': resolved.mbs.normalization_mode,
        'mbs': _seed_block(mbs_results, task, _epoch_makespan(mbs_results)),
        'baseline': _seed_block(baseline_results, task,
                                _epoch_makespan(baseline_results))
                    if baseline_results
                    else rp.failed_block(budget.required_bytes(n_b),
                                         budget.capacity_bytes),
        'memory': {'capacity_bytes': budget.capacity_bytes,
                   'param_bytes': budget.param_bytes,
                   'data_bytes_per_sample': budget.data_bytes_per_sample,
                   'fixed_overhead_bytes': budget.fixed_overhead_bytes,
                   'required_bytes_with_mbs': budget.required_bytes(n_mu),
                   'required_bytes_without_mbs': budget.required_bytes(n_b)},
        'stream': asdict(overhead),
    }
    rp.write_summary(summary, run_dir / sp.SUMMARY_FILE)
    rp.add_to_record(root, run_dir)
    if verbose:
        hp.print_banner(f'Wrote run files to: \n{run_dir}')
    return run_dir


#######################  sweep and simulators  ########################

def sweep(config, mini_batch_sizes, verbose= False):
    '''
        one run_experiment per mini-batch size, micro-batch size as
        configured; writes the comparison of all runs to the output root
        returns (run_dirs, comparison frame)
    '''
    run_dirs = []
    for size in mini_batch_sizes:
        sized = copy.deepcopy(config)
        sized.mbs.mini_batch_size = int(size)
        sized.run.name = f'{config.run.name}_b{size}'
        run_dirs.append(run_experiment(sized, verbose= verbose))
    root = sp.output_root(config.run.output_dir)
    df = rp.compare_report(run_dirs)
    rp.write_comparison(df, root / sp.SWEEP_CSV_FILE, root / sp.SWEEP_TEXT_FILE)
    rp.add_to_record(root, root / sp.SWEEP_CSV_FILE, kind= 'sweeps')
    if verbose:
        hp.print_banner(f'Sweep over {list(mini_batch_sizes)}',
                        f'wrote: \n{root / sp.SWEEP_CSV_FILE}')
        hp.my_df_print(df.select(['mini_batch_size', 'micro_batch_size',
                                  'metric_without_mbs', 'metric_with_mbs']))
    return run_dirs, df


def simulate_memory(config):
    '''
        fit table of the configured model over the report sizes
    '''
    budget = memory_budget(config)
    return mm.fit_table(budget, _report_sizes(config))


def simulate_stream(config):
    '''
        (MBS schedule, OverheadReport) of one full mini-batch;
        both are written to the output root
    '''
    resolved, budget = resolve_config(config)
    mbs_schedule, _, report = stream_reports(resolved, budget)
    root = sp.output_root(resolved.run.output_dir)
    root.mkdir(parents= True, exist_ok= True)
    mbs_schedule.to_frame().write_csv(root / sp.STREAM_SCHEDULE_FILE)
    with (root / sp.STREAM_SUMMARY_FILE).open('w') as f:
        json.dump({'overlap': resolved.stream.overlap,
                   'n_micro_batches':
                       mb.plan_split(resolved.mbs.mini_batch_size,
                                     resolved.mbs.micro_batch_size).n_s_mu,
                   **asdict(report)}, f, indent= 2)
    return mbs_schedule, report
