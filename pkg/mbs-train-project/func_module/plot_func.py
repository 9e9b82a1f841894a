'''
   training curves with and without MBS, one PDF page:
   epoch loss on top, the task's metric below

   access these values in other modules by
        import func_module.plot_func as pf
'''

from pathlib import Path

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import polars as pl

import paths as sp
import func_module.report_func as rp

SUPTITLE = ' \nTraining with and without Micro-Batch Streaming'
XLABL = '\nepoch\n'


def plot_curves(ax, df,
                title= None,
                ylim= (None, None),
                xlabl= None,
                ylabl= None):
    '''
        x axis is the 1st col of df
        every other col is one series, its legend name the col name
        a series with a single point is drawn as a scatter
    '''
    ax.set_title(title, fontweight= 'bold', loc= 'left')
    ax.set_xlabel(xlabl, fontweight= 'bold')
    ax.set_ylabel(ylabl, fontweight= 'bold')

    x = df[df.columns[0]].to_list()
    for name in df.columns[1:]:
        if df[name].count() == 0:
            continue
        # dashed: the plain mini-batch runs
        style = 'dashed' if name.endswith('no mbs') else 'solid'
        if df[name].count() == 1:
            ax.scatter(x, df[name].to_list(),
                       marker= 'o',
                       s= 15,
                       label= name)
        else:
            ax.plot(x, df[name].to_list(),
                    linestyle= style,
                    label= name)

    ax.set_ylim(ylim)
    ax.set_yticks(ax.get_yticks(), ax.get_yticklabels(),
                  fontsize= 8)

    ax0 = ax.twinx()
    ax0.set_ylim(ax.get_ylim())
    ax0.set_yticks(ax.get_yticks(), ax.get_yticklabels(),
                   fontsize= 8)
    ax0.set_ylabel(' ')

    ax.legend(title= 'runs:',
              title_fontsize= 9,
              fontsize= 8,
              loc= 'best')
    return ax


def _epoch_means(run_dir, file_name, column):
    '''
        per-epoch mean over seeds of one column of an epoch row
    '''
    path = Path(run_dir) / file_name
    if not path.exists():
        return None
    df = rp.epoch_rows(rp.read_metrics(path))
    if column not in df.columns:
        return None
    return df.group_by('epoch').agg(pl.col(column).mean()).sort('epoch')


def curves_df(run_dirs, column):
    '''
        epoch | "<run> mbs" | "<run> no mbs" | ... for one column
    '''
    frames = []
    for run_dir in run_dirs:
        summary = rp.read_summary(run_dir)
        label = f'{summary["name"]} B={summary["mini_batch_size"]}'
        for file_name, suffix in ((sp.METRICS_FILE, 'mbs'),
                                  (sp.BASELINE_METRICS_FILE, 'no mbs')):
            means = _epoch_means(run_dir, file_name, column)
            if means is not None:
                frames.append(means.rename({column: f'{label} {suffix}'}))
    if not frames:
        return pl.DataFrame({'epoch': []}, schema= {'epoch': pl.Int64})
    df = frames[0]
    for frame in frames[1:]:
        df = df.join(frame, on= 'epoch', how= 'full', coalesce= True)
    return df.sort('epoch')


def plot_runs(run_dirs, out_path):
    '''
        write the loss and metric curves of run_dirs to out_path (pdf)
    '''
    metric = rp.read_summary(run_dirs[0])['metric']

    fig = plt.figure(figsize= (8.5, 11),
                     layout= 'constrained')
    ax = fig.subplot_mosaic([['loss'],
                             ['metric']])
    fig.suptitle(SUPTITLE,
                 fontsize= 13,
                 fontweight= 'bold')

    plot_curves(ax['loss'], curves_df(run_dirs, 'loss'),
                title= ' \nMean Training Loss per Epoch',
                xlabl= XLABL,
                ylabl= '\nloss\n')
    plot_curves(ax['metric'], curves_df(run_dirs, metric),
                title= f' \n{metric.capitalize()} after each Epoch',
                ylim= (0, 1.05),
                xlabl= XLABL,
                ylabl= f'\n{metric}\n')

    out_path = Path(out_path)
    fig.savefig(str(out_path))
    plt.close(fig)
    return out_path
