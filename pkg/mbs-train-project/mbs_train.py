'''This program trains small networks with and without Micro-Batch
   Streaming (MBS) under a simulated device-memory capacity and
   reports how the two compare.

   A mini-batch that does not fit the simulated device is split into
   micro-batches that do; their gradients are accumulated and the
   optimizer steps once per mini-batch. Without MBS the same mini-batch
   either fits, and trains as one batch, or is recorded as "Failed".

   subcommands
        train <config>                      one experiment, one run dir
        compare [run_dirs...]               with/without-MBS table
        sweep <config> --mini-batch 16,32   one run per mini-batch size
        simulate-memory <config>            fit table, no training
        simulate-stream <config>            stream schedule and overhead
        plot [run_dirs...]                  loss and metric curves (pdf)

   compare and plot without run_dirs use the runs in record_dict.json
   of the output root; MBS_OUTPUT_ROOT overrides the output root

   exit codes: 0 ok, 2 config error, 3 no micro-batch fits, 1 other
'''

import argparse
import sys
from dataclasses import asdict

import paths as sp
import func_module.config_func as cf
import func_module.errors_func as er
import func_module.experiment_func as ex
import func_module.helper_func as hp
import func_module.plot_func as pf
import func_module.report_func as rp


#######################  subcommands  #################################

def train(args):
    config = cf.read_config(args.config)
    ex.run_experiment(config, verbose= not args.quiet)
    return 0


def _recorded_runs(run_dirs, latest_only= False):
    if run_dirs:
        return run_dirs
    record = rp.read_record(sp.output_root())
    if latest_only and record.get('latest_run'):
        return [record['latest_run']]
    if not record.get('runs'):
        raise er.MbsError(
            f'no run directories given and none recorded in '
            f'{sp.output_root() / sp.RECORD_DICT_FILE}')
    return record['runs']


def compare(args):
    run_dirs = _recorded_runs(args.run_dirs)
    df = rp.compare_report(run_dirs)
    root = sp.output_root()
    root.mkdir(parents= True, exist_ok= True)
    csv_path, text_path = rp.write_comparison(df, root / sp.COMPARE_CSV_FILE,
                                              root / sp.COMPARE_TEXT_FILE)
    hp.print_banner(f'Compared {len(run_dirs)} runs',
                    f'wrote: \n{csv_path}\n{text_path}')
    print(rp.comparison_text(df))
    return 0


def sweep(args):
    config = cf.read_config(args.config)
    ex.sweep(config, hp.parse_int_list(args.mini_batch),
             verbose= not args.quiet)
    return 0


def simulate_memory(args):
    config = cf.read_config(args.config)
    budget = ex.memory_budget(config)
    hp.print_banner(f'Simulated capacity: {budget.capacity_bytes} bytes',
                    f'parameter space: {budget.param_bytes} bytes',
                    f'data space per sample: '
                    f'{budget.data_bytes_per_sample} bytes')
    hp.my_df_print(ex.simulate_memory(config))
    return 0


def simulate_stream(args):
    config = cf.read_config(args.config)
    schedule, report = ex.simulate_stream(config)
    root = sp.output_root(config.run.output_dir)
    hp.print_banner(*(f'{key}: {value}'
                      for key, value in asdict(report).items()),
                    f'wrote: \n{root / sp.STREAM_SCHEDULE_FILE}'
                    f'\n{root / sp.STREAM_SUMMARY_FILE}')
    hp.my_df_print(schedule.to_frame(), float_precision= 6)
    return 0


def plot(args):
    run_dirs = _recorded_runs(args.run_dirs, latest_only= True)
    out_path = args.out or sp.output_root() / sp.PLOT_FILE
    pf.plot_runs(run_dirs, out_path)
    hp.print_banner(f'Wrote training curves to: \n{out_path}')
    return 0


#######################  MAIN Function  ###############################

def build_parser():
    parser = argparse.ArgumentParser(
        prog= 'mbs_train',
        description= 'training with and without Micro-Batch Streaming')
    commands = parser.add_subparsers(dest= 'command', required= True)

    cmd = commands.add_parser('train', help= 'run one experiment')
    cmd.add_argument('config')
    cmd.add_argument('--quiet', action= 'store_true')
    cmd.set_defaults(handler= train)

    cmd = commands.add_parser('compare', help= 'compare run directories')
    cmd.add_argument('run_dirs', nargs= '*')
    cmd.set_defaults(handler= compare)

    cmd = commands.add_parser('sweep', help= 'one run per mini-batch size')
    cmd.add_argument('config')
    cmd.add_argument('--mini-batch', required= True,
                     help= 'comma separated sizes, e.g. 16,32,64')
    cmd.add_argument('--quiet', action= 'store_true')
    cmd.set_defaults(handler= sweep)

    cmd = commands.add_parser('simulate-memory', help= 'print the fit table')
    cmd.add_argument('config')
    cmd.set_defaults(handler= simulate_memory)

    cmd = commands.add_parser('simulate-stream',
                              help= 'simulate one mini-batch schedule')
    cmd.add_argument('config')
    cmd.set_defaults(handler= simulate_stream)

    cmd = commands.add_parser('plot', help= 'training curves to pdf')
    cmd.add_argument('run_dirs', nargs= '*')
    cmd.add_argument('--out', default= '')
    cmd.set_defaults(handler= plot)
    return parser


def main(argv= None):
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except er.MbsError as exc:
        hp.print_banner(f'{type(exc).__name__}:', str(exc),
                        'Processing ended', stream= sys.stderr)
        return exc.exit_code


if __name__ == '__main__':
    sys.exit(main())
