'''
   run output: metrics and timing CSVs, the summary JSON, the record
   of runs in the output root, and the with/without-MBS comparison

   every float in a CSV is written with 17 significant digits so
   two runs of one config give byte-identical files

   access these values in other modules by
        import func_module.report_func as rp
'''

import io
import json
from pathlib import Path

import polars as pl

import paths as sp
import func_module.errors_func as er
import func_module.helper_func as hp
from func_module.memory_func import FAILED

ROW_KINDS = ('mini_batch', 'epoch')

METRIC_COLUMNS = {'classification': ('accuracy',),
                  'segmentation': ('iou', 'dice', 'iou_micro', 'dice_micro')}
# the metric summaries and comparisons are built on
PRIMARY_METRIC = {'classification': 'accuracy', 'segmentation': 'iou'}

INT_COLUMNS = ('seed', 'epoch', 'mini_batch_index', 'n_samples',
               'n_micro_batches', 'step_count')
FLOAT_COLUMNS = ('lr', 'loss', 'eval_loss')
TIMING_COLUMNS = ('seed', 'run', 'epoch', 'wall_seconds')

COMPARE_COLUMNS = ['name', 'metric', 'mini_batch_size', 'micro_batch_size',
                   'metric_without_mbs', 'metric_with_mbs', 'metric_delta',
                   'time_without_mbs', 'time_with_mbs', 'time_delta',
                   'wall_without_mbs', 'wall_with_mbs']


def metric_columns(task):
    if task not in METRIC_COLUMNS:
        raise ValueError(f'unknown task {task}')
    return METRIC_COLUMNS[task]


def metrics_columns(task):
    '''
        fixed column order of metrics.csv for a task
    '''
    return ['seed', 'epoch', 'row_kind', 'mini_batch_index', 'n_samples',
            'n_micro_batches', 'step_count', 'lr', 'loss', 'eval_loss',
            *metric_columns(task), 'makespan_seconds']


#######################  metrics.csv  #################################

def _cell(value):
    if value is None:
        return None
    if isinstance(value, float):
        return hp.format_float(value)
    return str(value)


def metrics_frame(rows, task):
    '''
        rows: dicts keyed by metrics_columns(task); missing keys are
        empty cells; every cell is text so floats keep all 17 digits
    '''
    columns = metrics_columns(task)
    data = {name: [_cell(row.get(name)) for row in rows] for name in columns}
    return pl.DataFrame(data, schema= {name: pl.String for name in columns})


def write_metrics(rows, task, path):
    path = Path(path)
    metrics_frame(rows, task).write_csv(path)
    return path


def read_metrics(path):
    '''
        metrics.csv -> typed frame (ints, floats, row_kind as text)
    '''
    path = Path(path)
    if not path.exists():
        raise er.MbsError(f'no metrics file at {path}')
    return typed_metrics(pl.read_csv(path, infer_schema_length= 0))


def typed_metrics(df):
    return df.with_columns(
        [pl.col(name).cast(pl.Int64) for name in INT_COLUMNS
         if name in df.columns]
        + [pl.col(name).cast(pl.Float64) for name in df.columns
           if name not in INT_COLUMNS and name != 'row_kind'])


def epoch_rows(df):
    return df.filter(pl.col('row_kind') == 'epoch')


#######################  timing.csv  ##################################

def write_timing(rows, path):
    '''
        wall-clock seconds per (seed, run, epoch); machine dependent,
        kept out of metrics.csv
    '''
    path = Path(path)
    data = {name: [_cell(row[name]) for row in rows]
            for name in TIMING_COLUMNS}
    pl.DataFrame(data, schema= {name: pl.String for name in TIMING_COLUMNS})\
      .write_csv(path)
    return path


#######################  summary.json  ################################

def write_summary(summary, path):
    path = Path(path)
    with path.open('w') as f:
        json.dump(summary, f, indent= 2)
    return path


def read_summary(run_dir):
    path = Path(run_dir) / sp.SUMMARY_FILE
    if not path.exists():
        raise er.MbsError(f'no {sp.SUMMARY_FILE} in {run_dir}')
    with path.open('r') as f:
        return json.load(f)


def epoch_metric(df, metric):
    '''
        one value per epoch row: its evaluated metric, or the mean
        over the mini-batch rows of that epoch when it was not evaluated
    '''
    keys = ['seed', 'epoch']
    means = df.filter(pl.col('row_kind') == 'mini_batch')\
              .group_by(keys)\
              .agg(pl.col(metric).mean().alias('mini_batch_mean'))
    return epoch_rows(df).join(means, on= keys, how= 'left')\
                         .sort(keys)\
                         .select(pl.coalesce(metric, 'mini_batch_mean'))\
                         .to_series().to_list()


def seed_summary(seed, df, metric, step_count, wall_seconds):
    '''
        final and max metric of one training run from its typed
        metrics frame (mini-batch and epoch rows)
    '''
    values = [value for value in epoch_metric(df, metric)
              if value is not None]
    losses = epoch_rows(df).sort('epoch')['loss'].to_list()
    return {'seed': seed,
            'final_loss': losses[-1] if losses else None,
            'final_metric': values[-1] if values else None,
            'max_metric': max(values) if values else None,
            'step_count': step_count,
            'wall_seconds': wall_seconds}


def aggregate_seeds(per_seed, makespan_per_epoch):
    '''
        mean and population std over seeds of the final and max metric
    '''
    block = {'status': 'ok', 'per_seed': per_seed,
             'makespan_seconds_per_epoch': makespan_per_epoch}
    for key in ('final_metric', 'max_metric', 'final_loss', 'wall_seconds'):
        values = [entry[key] for entry in per_seed if entry[key] is not None]
        mean, std = hp.mean_std(values)
        block[f'{key}_mean'] = mean
        block[f'{key}_std'] = std
    return block


def failed_block(required_bytes, capacity_bytes):
    return {'status': FAILED, 'required_bytes': required_bytes,
            'capacity_bytes': capacity_bytes}


#######################  record of runs  ##############################

def read_record(root):
    '''
        record_dict of the output root, empty record if none yet
    '''
    path = Path(root) / sp.RECORD_DICT_FILE
    if not path.exists():
        return {'latest_run': '', 'runs': [], 'sweeps': []}
    with path.open('r') as f:
        return json.load(f)


def add_to_record(root, run_dir, kind= 'runs'):
    '''
        put run_dir first in record[kind]; the previous record is
        copied to the backup file before it is replaced
    '''
    root = Path(root)
    root.mkdir(parents= True, exist_ok= True)
    record = read_record(root)
    path = root / sp.RECORD_DICT_FILE
    if path.exists():
        with (root / sp.BACKUP_RECORD_DICT_FILE).open('w') as f:
            json.dump(record, f)
    entry = str(run_dir)
    record.setdefault(kind, [])
    record[kind] = [entry] + [item for item in record[kind] if item != entry]
    if kind == 'runs':
        record['latest_run'] = entry
    with path.open('w') as f:
        json.dump(record, f, indent= 2)
    return record


#######################  comparison  ##################################

def _delta(with_mbs, without_mbs):
    if isinstance(without_mbs, str) or without_mbs is None \
            or with_mbs is None:
        return FAILED if without_mbs == FAILED else None
    return with_mbs - without_mbs


def _comparison_row(summary):
    mbs = summary['mbs']
    baseline = summary['baseline']
    failed = baseline['status'] == FAILED
    row = {'name': summary['name'],
           'metric': summary['metric'],
           'mini_batch_size': summary['mini_batch_size'],
           'micro_batch_size': summary['micro_batch_size'],
           'metric_with_mbs': mbs['max_metric_mean'],
           'time_with_mbs': mbs['makespan_seconds_per_epoch'],
           'wall_with_mbs': mbs['wall_seconds_mean']}
    if failed:
        row.update({'metric_without_mbs': FAILED, 'time_without_mbs': FAILED,
                    'wall_without_mbs': FAILED})
    else:
        row.update({'metric_without_mbs': baseline['max_metric_mean'],
                    'time_without_mbs': baseline['makespan_seconds_per_epoch'],
                    'wall_without_mbs': baseline['wall_seconds_mean']})
    row['metric_delta'] = _delta(row['metric_with_mbs'],
                                 row['metric_without_mbs'])
    row['time_delta'] = _delta(row['time_with_mbs'], row['time_without_mbs'])
    return row


def compare_report(run_dirs):
    '''
        one row per run directory: metric and time with and without
        MBS; a baseline that did not fit shows "Failed"
        all cells are text, floats with 17 significant digits
    '''
    if not run_dirs:
        raise er.IncompatibleRunsError('no run directories to compare')
    summaries = [read_summary(run_dir) for run_dir in run_dirs]
    metrics = {summary['metric'] for summary in summaries}
    if len(metrics) > 1:
        raise er.IncompatibleRunsError(
            f'runs report different metrics: {sorted(metrics)}')
    rows = [_comparison_row(summary) for summary in summaries]
    data = {name: [_cell(row[name]) for row in rows]
            for name in COMPARE_COLUMNS}
    return pl.DataFrame(data,
                        schema= {name: pl.String for name in COMPARE_COLUMNS})


def _short(cell):
    if cell is None or cell == FAILED:
        return cell
    try:
        return f'{float(cell):.6g}'
    except ValueError:
        return cell


def comparison_text(df):
    '''
        aligned text table, numbers cut to 6 significant digits
    '''
    short = df.with_columns(
        [pl.col(name).map_elements(_short, return_dtype= pl.String)
         for name in df.columns if name not in ('name', 'metric')])
    out = io.StringIO()
    hp.my_df_print(short, stream= out)
    return out.getvalue()


def write_comparison(df, csv_path, text_path):
    df.write_csv(Path(csv_path))
    Path(text_path).write_text(comparison_text(df), encoding= 'utf-8')
    return Path(csv_path), Path(text_path)
