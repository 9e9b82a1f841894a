'''
    set global absolute paths for IO addresses
        using absolute path to "mbs-train-project" directory
    use universal path expressions
        using Path() from pathlib

    access these values in other modules by
        import paths as sp
            sp.OUTPUT_DIR
'''

import os
from pathlib import Path

# environment variable that overrides the output root of every run
OUTPUT_ROOT_ENV = 'MBS_OUTPUT_ROOT'

# Project's data:
# Path() produces "universal path" and
#      allows simple appending for extensions
#      => no '/' at end of path, format of append provides it
BASE_DIR = Path.cwd()

CONFIG_DIR = BASE_DIR / 'configs'
OUTPUT_DIR = BASE_DIR / 'output_dir'

RECORD_DICT_FILE = 'record_dict.json'
BACKUP_RECORD_DICT_FILE = 'backup_record_dict.json'

# files written into each run directory
CONFIG_FILE = 'config.txt'
METRICS_FILE = 'metrics.csv'
BASELINE_METRICS_FILE = 'baseline_metrics.csv'
TIMING_FILE = 'timing.csv'
SUMMARY_FILE = 'summary.json'
MEMORY_REPORT_FILE = 'memory_report.csv'
STREAM_SCHEDULE_FILE = 'stream_schedule.csv'
STREAM_SUMMARY_FILE = 'stream_summary.json'

# files written into the output root
SWEEP_CSV_FILE = 'sweep_comparison.csv'
SWEEP_TEXT_FILE = 'sweep_comparison.txt'
COMPARE_CSV_FILE = 'comparison.csv'
COMPARE_TEXT_FILE = 'comparison.txt'
PLOT_FILE = 'loss_curves.pdf'


def output_root(configured= ''):
    '''
        the env var wins, then the config's run.output_dir,
        then OUTPUT_DIR
    '''
    override = os.environ.get(OUTPUT_ROOT_ENV, '')
    if override:
        return Path(override)
    if configured:
        return Path(configured)
    return OUTPUT_DIR
