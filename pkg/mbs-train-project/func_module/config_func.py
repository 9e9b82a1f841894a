'''
   experiment configuration: typed dataclass sections read from and
   written to a flat text file of dotted keys

        # comment
        run.seed = 1
        model.input_shape = 4
        model.layers.0.kind = dense
        model.layers.0.in = 4
        mbs.micro_batch_size = auto

   values take the type of the field they land in; floats are written
   with repr so a written config reads back bit-exactly

   access these values in other modules by
        import func_module.config_func as cf
'''

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import func_module.autograd_func as ag
import func_module.data_func as dt
import func_module.errors_func as er
import func_module.loss_func as lf
import func_module.mbs_func as mb
import func_module.optim_func as op

AUTO = 'auto'


@dataclass
class RunConfig:
    name: str = 'mbs_run'
    seed: int = 0
    # several seeds: train once per seed, summary reports mean and std
    seeds: tuple = ()
    epochs: int = 5
    output_dir: str = ''
    # eval-mode pass over the dataset for every epoch-summary row
    eval_every_epoch: bool = True


@dataclass
class ModelConfig:
    input_shape: tuple = (4,)
    layers: list = field(default_factory= list)

    def spec(self):
        return ag.ModelSpec(layers= list(self.layers))


@dataclass
class LossConfig:
    kind: str = 'cross_entropy'
    from_logits: bool = True
    dice_smoothing: float = lf.DICE_SMOOTHING
    metric_threshold: float = lf.METRIC_THRESHOLD


@dataclass
class OptimConfig:
    kind: str = 'sgd'
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_schedule: str = 'none'
    schedule_unit: str = 'update'

    def hyper(self):
        return {'lr': self.lr, 'momentum': self.momentum,
                'weight_decay': self.weight_decay,
                'adam_beta1': self.adam_beta1,
                'adam_beta2': self.adam_beta2,
                'adam_eps': self.adam_eps}


@dataclass
class MbsConfig:
    mini_batch_size: int = 16
    # None: the largest size fit_micro_batch allows
    micro_batch_size: int | None = None
    normalization_mode: str = mb.NormalizationMode.PAPER_FAITHFUL.value
    fold_into_seed: bool = False
    prefetch: bool = False


@dataclass
class MemoryConfig:
    capacity_bytes: int = 1 << 20
    fixed_overhead_bytes: int = 0
    report_mini_batch_sizes: tuple = (16, 32, 64, 128, 256)


@dataclass
class StreamConfig:
    transfer_seconds_per_byte: float = 1e-9
    compute_seconds_per_sample_forward: float = 1e-4
    compute_seconds_per_sample_backward: float = 2e-4
    update_seconds: float = 1e-3
    transfer_latency_seconds: float = 0.0
    compute_launch_seconds: float = 0.0
    overlap: bool = False

    def cost_model(self):
        from func_module.stream_func import CostModel
        return CostModel(**{item.name: getattr(self, item.name)
                            for item in dataclasses.fields(CostModel)})


@dataclass
class ExperimentConfig:
    run: RunConfig = field(default_factory= RunConfig)
    model: ModelConfig = field(default_factory= ModelConfig)
    dataset: dt.DatasetSpec = field(default_factory= dt.DatasetSpec)
    loss: LossConfig = field(default_factory= LossConfig)
    optim: OptimConfig = field(default_factory= OptimConfig)
    mbs: MbsConfig = field(default_factory= MbsConfig)
    memory: MemoryConfig = field(default_factory= MemoryConfig)
    stream: StreamConfig = field(default_factory= StreamConfig)

    def seed_list(self):
        return list(self.run.seeds) or [self.run.seed]


SECTIONS = {item.name: item.default_factory
            for item in dataclasses.fields(ExperimentConfig)}


#######################  value conversion  ############################

def _is_optional_int(hint):
    return isinstance(hint, types.UnionType) \
        and set(typing.get_args(hint)) == {int, type(None)}


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ('true', 'yes', '1'):
        return True
    if lowered in ('false', 'no', '0'):
        return False
    raise ValueError(f'not a boolean: {text}')


def _parse_value(hint, text):
    text = text.strip()
    if hint is bool:
        return _parse_bool(text)
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is tuple:
        return tuple(int(item) for item in text.split(',') if item.strip())
    if _is_optional_int(hint):
        return None if text in ('', AUTO) else int(text)
    return text


def _format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if value is None:
        return AUTO
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ','.join(str(item) for item in value)
    return str(value)


def _hints(cls):
    return typing.get_type_hints(cls)


#######################  layers  ######################################

def _build_layer(index, entries, line_of):
    kind = entries.pop('kind', None)
    if kind not in ag.LAYER_KINDS:
        raise er.ConfigError(
            f'model.layers.{index}.kind must be one of '
            f'{sorted(ag.LAYER_KINDS)}, got {kind}')
    layer_cls = ag.LAYER_KINDS[kind]
    by_name = {name: (attr, hint)
               for name, attr, hint in layer_cls.config_fields}
    kwargs = {}
    for name, text in entries.items():
        key = f'model.layers.{index}.{name}'
        if name not in by_name:
            raise er.ConfigError(
                f'line {line_of[key]}: {kind} has no field {name}')
        attr, hint = by_name[name]
        try:
            kwargs[attr] = _parse_value(hint, text)
        except ValueError as exc:
            raise er.ConfigError(f'line {line_of[key]}: {key}: {exc}')
    try:
        return layer_cls(**kwargs)
    except TypeError as exc:
        raise er.ConfigError(f'model.layers.{index} ({kind}): {exc}')


def layer_entries(layer):
    '''
        config field name -> value for one layer descriptor
    '''
    entries = {'kind': layer.kind}
    for name, attr, _ in layer.config_fields:
        value = getattr(layer, attr)
        if value is not None:
            entries[name] = value
    return entries


#######################  read / write  ################################

def parse_config(text):
    '''
        flat text -> ExperimentConfig
        unknown keys, bad values and duplicate keys raise ConfigError
    '''
    config = ExperimentConfig()
    line_of = {}
    layers = {}
    for number, raw in enumerate(text.splitlines(), start= 1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise er.ConfigError(f'line {number}: expected key = value')
        key, value = (part.strip() for part in line.split('=', 1))
        if key in line_of:
            raise er.ConfigError(f'line {number}: duplicate key {key}')
        line_of[key] = number
        parts = key.split('.')

        if parts[0] == 'model' and len(parts) == 4 and parts[1] == 'layers':
            if not parts[2].isdigit():
                raise er.ConfigError(
                    f'line {number}: layer index must be an integer: {key}')
            layers.setdefault(int(parts[2]), {})[parts[3]] = value
            continue
        if len(parts) != 2 or parts[0] not in SECTIONS:
            raise er.ConfigError(f'line {number}: unknown key {key}')
        section = getattr(config, parts[0])
        hints = _hints(type(section))
        if parts[1] not in hints or parts[1] == 'layers':
            raise er.ConfigError(f'line {number}: unknown key {key}')
        try:
            setattr(section, parts[1], _parse_value(hints[parts[1]], value))
        except ValueError as exc:
            raise er.ConfigError(f'line {number}: {key}: {exc}')

    if layers:
        if sorted(layers) != list(range(len(layers))):
            raise er.ConfigError(
                f'model.layers indices must run 0..{len(layers) - 1}, '
                f'got {sorted(layers)}')
        config.model.layers = [_build_layer(index, layers[index], line_of)
                               for index in range(len(layers))]
    validate(config)
    return config


def read_config(path):
    path = Path(path)
    if not path.exists():
        raise er.ConfigError(f'no config file at {path}')
    return parse_config(path.read_text(encoding= 'utf-8'))


def format_config(config):
    lines = []
    for section_name in SECTIONS:
        section = getattr(config, section_name)
        for item in dataclasses.fields(section):
            if section_name == 'model' and item.name == 'layers':
                for index, layer in enumerate(section.layers):
                    for name, value in layer_entries(layer).items():
                        lines.append(f'model.layers.{index}.{name} = '
                                     f'{_format_value(value)}')
                continue
            value = getattr(section, item.name)
            lines.append(f'{section_name}.{item.name} = '
                         f'{_format_value(value)}')
        lines.append('')
    return '\n'.join(lines)


def write_config(config, path):
    path = Path(path)
    path.write_text(format_config(config), encoding= 'utf-8')
    return path


#######################  checks  ######################################

def _require(condition, message):
    if not condition:
        raise er.ConfigError(message)


def validate(config):
    _require(len(config.model.layers) > 0, 'model.layers is empty')
    _require(config.run.epochs >= 1, 'run.epochs must be >= 1')
    _require(config.mbs.mini_batch_size >= 1,
             'mbs.mini_batch_size must be >= 1')
    _require(config.mbs.micro_batch_size is None
             or config.mbs.micro_batch_size >= 1,
             'mbs.micro_batch_size must be >= 1 or auto')
    _require(config.mbs.normalization_mode
             in [mode.value for mode in mb.NormalizationMode],
             f'mbs.normalization_mode must be one of '
             f'{[mode.value for mode in mb.NormalizationMode]}')
    _require(config.loss.kind in lf.LOSS_KINDS,
             f'loss.kind must be one of {lf.LOSS_KINDS}')
    _require(config.optim.kind in op.OPTIMIZER_KINDS,
             f'optim.kind must be one of {op.OPTIMIZER_KINDS}')
    _require(config.optim.lr > 0, 'optim.lr must be positive')
    _require(config.optim.momentum >= 0, 'optim.momentum must be >= 0')
    _require(config.optim.weight_decay >= 0,
             'optim.weight_decay must be >= 0')
    for name in ('adam_beta1', 'adam_beta2'):
        _require(0.0 <= getattr(config.optim, name) < 1.0,
                 f'optim.{name} must lie in [0, 1)')
    _require(config.optim.adam_eps > 0, 'optim.adam_eps must be positive')
    _require(config.optim.lr_schedule in op.LR_SCHEDULES,
             f'optim.lr_schedule must be one of {op.LR_SCHEDULES}')
    _require(config.optim.schedule_unit in op.SCHEDULE_UNITS,
             f'optim.schedule_unit must be one of {op.SCHEDULE_UNITS}')
    _require(config.dataset.kind in dt.DATASET_KINDS,
             f'dataset.kind must be one of {dt.DATASET_KINDS}')
    task = dt.DATASET_TASKS[config.dataset.kind]
    _require(config.loss.kind in lf.TASK_LOSSES[task],
             f'loss.kind {config.loss.kind} does not fit a {task} '
             f'dataset, use one of {lf.TASK_LOSSES[task]}')
    for item in dataclasses.fields(StreamConfig):
        if item.name != 'overlap':
            _require(getattr(config.stream, item.name) >= 0,
                     f'stream.{item.name} must be >= 0')
    _require(0.0 < config.loss.metric_threshold < 1.0,
             'loss.metric_threshold must lie in (0, 1)')
    _require(config.memory.capacity_bytes > 0,
             'memory.capacity_bytes must be positive')
    try:
        ag.trace_shapes(config.model.spec(), config.model.input_shape)
    except er.ShapeError as exc:
        raise er.ConfigError(f'model does not compose: {exc}')
    return config
