from pathlib import Path

import pytest

import func_module.autograd_func as ag
import func_module.config_func as cf
import func_module.errors_func as er

CONFIG_DIR = Path(__file__).resolve().parents[1] / 'configs'

MINIMAL = '''
# two-layer model
run.seed = 3
model.input_shape = 4
model.layers.0.kind = dense
model.layers.0.in = 4
model.layers.0.out = 3
mbs.mini_batch_size = 32   # whole batch
mbs.micro_batch_size = 8
'''


def test_parse_minimal_config():
    config = cf.parse_config(MINIMAL)
    assert config.run.seed == 3
    assert config.model.input_shape == (4,)
    assert config.model.layers == [ag.Dense(4, 3)]
    assert config.mbs.mini_batch_size == 32
    assert config.mbs.micro_batch_size == 8
    assert config.seed_list() == [3]


def test_auto_micro_batch_size():
    config = cf.parse_config(
        MINIMAL.replace('micro_batch_size = 8', 'micro_batch_size = auto'))
    assert config.mbs.micro_batch_size is None


@pytest.mark.parametrize('name', sorted(path.name for path in
                                        CONFIG_DIR.glob('*.cfg')))
def test_shipped_configs_read_back_identically(name, tmp_path):
    config = cf.read_config(CONFIG_DIR / name)
    written = cf.write_config(config, tmp_path / name)
    assert cf.read_config(written) == config


def test_floats_survive_the_round_trip():
    config = cf.parse_config(MINIMAL)
    config.optim.lr = 0.1 + 0.2
    config.stream.transfer_seconds_per_byte = 1 / 3
    again = cf.parse_config(cf.format_config(config))
    assert again.optim.lr == 0.1 + 0.2
    assert again.stream.transfer_seconds_per_byte == 1 / 3


def test_seeds_list():
    config = cf.parse_config(MINIMAL + 'run.seeds = 1,2,3\n')
    assert config.seed_list() == [1, 2, 3]


def test_missing_equals_names_the_line():
    with pytest.raises(er.ConfigError, match= 'line 3'):
        cf.parse_config('run.seed = 1\n\nrun.epochs 4\n')


def test_unknown_key():
    with pytest.raises(er.ConfigError, match= 'unknown key run.speed'):
        cf.parse_config(MINIMAL + 'run.speed = 4\n')


def test_unknown_section():
    with pytest.raises(er.ConfigError, match= 'unknown key'):
        cf.parse_config(MINIMAL + 'device.memory = 4\n')


def test_duplicate_key():
    with pytest.raises(er.ConfigError, match= 'duplicate key run.seed'):
        cf.parse_config(MINIMAL + 'run.seed = 4\n')


def test_bad_value_names_the_key():
    with pytest.raises(er.ConfigError, match= 'run.epochs'):
        cf.parse_config(MINIMAL + 'run.epochs = many\n')


def test_bad_layer_field():
    with pytest.raises(er.ConfigError, match= 'dense has no field width'):
        cf.parse_config(MINIMAL + 'model.layers.0.width = 4\n')


def test_unknown_layer_kind():
    with pytest.raises(er.ConfigError, match= 'model.layers.1.kind'):
        cf.parse_config(MINIMAL + 'model.layers.1.kind = attention\n')


def test_layer_indices_must_be_contiguous():
    with pytest.raises(er.ConfigError, match= 'indices'):
        cf.parse_config(MINIMAL + 'model.layers.2.kind = relu\n')


def test_layers_that_do_not_compose():
    with pytest.raises(er.ConfigError, match= 'does not compose'):
        cf.parse_config(MINIMAL + 'model.layers.1.kind = dense\n'
                        'model.layers.1.in = 5\nmodel.layers.1.out = 2\n')


@pytest.mark.parametrize('line', [
    'mbs.normalization_mode = mean',
    'loss.kind = hinge',
    'optim.kind = lbfgs',
    'optim.lr = 0.0',
    'run.epochs = 0',
    'loss.metric_threshold = 1.0',
    'memory.capacity_bytes = 0',
    'mbs.micro_batch_size = 0',
    'optim.momentum = -0.5',
    'optim.weight_decay = -0.001',
    'optim.adam_beta2 = 1.0',
    'stream.update_seconds = -1.0',
    'stream.transfer_seconds_per_byte = -1e-9',
    'stream.compute_launch_seconds = -0.5',
])
def test_validate_rejects(line):
    with pytest.raises(er.ConfigError):
        cf.parse_config(MINIMAL.replace('mbs.micro_batch_size = 8', '')
                        + line + '\n')


def test_empty_model_is_rejected():
    with pytest.raises(er.ConfigError, match= 'empty'):
        cf.parse_config('run.seed = 1\n')


def test_missing_config_file(tmp_path):
    with pytest.raises(er.ConfigError):
        cf.read_config(tmp_path / 'absent.cfg')


def test_cost_model_from_the_stream_section():
    config = cf.parse_config(MINIMAL + 'stream.update_seconds = 0.5\n')
    assert config.stream.cost_model().update_seconds == 0.5


@pytest.mark.parametrize('dataset, loss', [
    ('synthetic_classification', 'bce'),
    ('synthetic_classification', 'mse'),
    ('synthetic_segmentation', 'cross_entropy'),
])
def test_loss_must_fit_the_dataset_task(dataset, loss):
    with pytest.raises(er.ConfigError, match= 'does not fit'):
        cf.parse_config(MINIMAL + f'dataset.kind = {dataset}\n'
                        f'loss.kind = {loss}\n')
