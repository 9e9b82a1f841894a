'''
   these are functions used by the mbs_train script
   and by the other func_module modules

   access these values in other modules by
        import func_module.helper_func as hp
'''
import sys
import zlib

import numpy as np
import polars as pl

BANNER_RULE = '============================================'


def my_df_print(df, float_precision= 4, stream= None):
    '''
        custom print df function to format data
    '''
    with pl.Config(
        tbl_cell_numeric_alignment="RIGHT",
        tbl_rows=-1,
        tbl_cols=-1,
        tbl_hide_dataframe_shape=True,
        float_precision=float_precision
    ):
        print(df, file= stream or sys.stdout)


def print_banner(*lines, stream= None):
    '''
        framed status message, one item per line
    '''
    out = stream or sys.stdout
    print(f'\n{BANNER_RULE}', file= out)
    for line in lines:
        print(line, file= out)
    print(f'{BANNER_RULE}\n', file= out)


def substream(seed, name, *extra):
    '''
        counter-based (Philox) generator for the named stream of seed
        each name gets an independent stream, so drawing more
        numbers from one stream never shifts another
    '''
    key = (zlib.crc32(name.encode('utf-8')),
           *(int(item) for item in extra))
    seq = np.random.SeedSequence(int(seed), spawn_key= key)
    return np.random.Generator(np.random.Philox(seq))


def max_relative_error(actual, expected, floor= 1e-300):
    '''
        max |actual - expected| scaled by the largest |expected|,
        never by less than floor
        a tensor whose true value is zero (a bias followed by
        batchnorm) only compares well with a floor near the
        absolute noise that is acceptable
        0 when both are exactly equal
    '''
    actual = np.asarray(actual, dtype= np.float64)
    expected = np.asarray(expected, dtype= np.float64)
    diff = float(np.max(np.abs(actual - expected), initial= 0.0))
    if diff == 0.0:
        return 0.0
    scale = float(np.max(np.abs(expected), initial= 0.0))
    return diff / max(scale, floor)


def max_relative_error_sets(actual, expected, floor= 1e-300):
    '''
        worst max_relative_error over the tensors of two
        gradient (or parameter) sets with the same keys
    '''
    return max((max_relative_error(actual[name], expected[name], floor)
                for name in expected),
               default= 0.0)


def format_float(value):
    '''
        17 significant digits: parsing the text gives back
        the same 64-bit float
    '''
    if value is None:
        return ''
    return f'{float(value):.17g}'


def parse_int_list(text):
    '''
        '16,32, 64' -> [16, 32, 64]
    '''
    return [int(item) for item in str(text).split(',')
            if item.strip()]


def mean_std(values):
    '''
        population mean and standard deviation,
        None for an empty list
    '''
    if len(values) == 0:
        return None, None
    arr = np.asarray(values, dtype= np.float64)
    return float(arr.mean()), float(arr.std())
