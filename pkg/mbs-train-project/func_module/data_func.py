'''
   datasets: seeded synthetic classification and segmentation sets
   and a reader for IDX image/label files

   every generated dataset is a pure function of its DatasetSpec

   access these values in other modules by
        import func_module.data_func as dt
'''

import struct
from dataclasses import dataclass, field
from math import prod
from pathlib import Path

import numpy as np

import func_module.errors_func as er
import func_module.helper_func as hp

DATASET_KINDS = ('synthetic_classification', 'synthetic_segmentation',
                 'idx_images')
DATASET_TASKS = {'synthetic_classification': 'classification',
                 'synthetic_segmentation': 'segmentation',
                 'idx_images': 'classification'}

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
IDX_IMAGE_HEADER = 16
IDX_LABEL_HEADER = 8


@dataclass
class DatasetSpec:
    kind: str = 'synthetic_classification'
    n_samples: int = 64
    input_shape: tuple = (4,)
    n_classes: int = 3
    mask_shape: tuple = (8, 8)
    # None: use the run seed
    seed: int | None = None
    path: str = ''
    labels_path: str = ''
    # distance scale between class means, in units of the noise
    separation: float = 4.0
    noise: float = 1.0
    max_shapes: int = 3


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]

    def slice(self, start, stop):
        '''
            contiguous copy of samples [start, stop)
        '''
        return Batch(np.ascontiguousarray(self.inputs[start:stop]),
                     np.ascontiguousarray(self.targets[start:stop]))


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    # classification | segmentation
    task: str
    n_classes: int = 0
    meta: dict = field(default_factory= dict)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_shape(self):
        return tuple(self.inputs.shape[1:])

    def batch(self, indices):
        return Batch(np.ascontiguousarray(self.inputs[indices]),
                     np.ascontiguousarray(self.targets[indices]))

    def all(self):
        return Batch(self.inputs, self.targets)


#######################  synthetic classification  ####################

def gen_synthetic_classification(spec, seed= 0):
    '''
        Gaussian clusters, one per class; labels i % n_classes,
        shuffled, so class counts differ by at most one
    '''
    if spec.n_classes < 2:
        raise er.ConfigError('synthetic classification needs n_classes >= 2')
    shape = tuple(int(dim) for dim in spec.input_shape)
    if spec.n_samples < 1 or len(shape) == 0 or any(dim < 1 for dim in shape):
        raise er.ConfigError(
            f'degenerate dataset shape: {spec.n_samples} samples of {shape}')

    rng = hp.substream(spec.seed if spec.seed is not None else seed,
                       'dataset')
    n_features = prod(shape)
    means = rng.normal(0.0, 1.0, size= (spec.n_classes, n_features))
    means *= spec.separation * spec.noise / np.sqrt(n_features)
    spreads = spec.noise * rng.uniform(0.5, 1.0, size= spec.n_classes)
    labels = rng.permutation(np.arange(spec.n_samples) % spec.n_classes)
    inputs = means[labels] + spreads[labels, None] \
        * rng.normal(0.0, 1.0, size= (spec.n_samples, n_features))
    return Dataset(inputs= inputs.reshape(spec.n_samples, *shape),
                   targets= labels.astype(np.int64),
                   task= 'classification',
                   n_classes= spec.n_classes)


#######################  synthetic segmentation  ######################

def draw_mask(shapes, mask_shape):
    '''
        shapes: ('rect', top, left, height, width) or
                ('disk', center_row, center_col, radius)
        returns the binary float mask covered by their union
    '''
    rows, cols = np.indices(mask_shape)
    mask = np.zeros(mask_shape, dtype= np.float64)
    for shape in shapes:
        if shape[0] == 'rect':
            _, top, left, height, width = shape
            inside = (rows >= top) & (rows < top + height) \
                & (cols >= left) & (cols < left + width)
        elif shape[0] == 'disk':
            _, center_row, center_col, radius = shape
            inside = (rows - center_row) ** 2 + (cols - center_col) ** 2 \
                <= radius ** 2
        else:
            raise ValueError(f'unknown shape kind {shape[0]}')
        mask[inside] = 1.0
    return mask


def _random_shapes(rng, mask_shape, max_shapes):
    height, width = mask_shape
    shapes = []
    for _ in range(int(rng.integers(0, max_shapes + 1))):
        if rng.random() < 0.5:
            top = int(rng.integers(0, height))
            left = int(rng.integers(0, width))
            shapes.append(('rect', top, left,
                           int(rng.integers(1, height - top + 1)),
                           int(rng.integers(1, width - left + 1))))
        else:
            shapes.append(('disk',
                           float(rng.uniform(0, height)),
                           float(rng.uniform(0, width)),
                           float(rng.uniform(1.0, max(height, width) / 2))))
    return shapes


def render_image(mask, rng, noise):
    '''
        foreground brighter than background, plus Gaussian noise
    '''
    return mask + noise * 0.25 * rng.normal(0.0, 1.0, size= mask.shape)


def gen_synthetic_segmentation(spec, seed= 0):
    '''
        one-channel images of random rectangles and disks;
        targets are the exact masks, shape (N, 1, H, W)
    '''
    mask_shape = tuple(int(dim) for dim in spec.mask_shape)
    input_shape = tuple(int(dim) for dim in spec.input_shape)
    if len(mask_shape) != 2 or any(dim < 1 for dim in mask_shape) \
            or spec.n_samples < 1:
        raise er.ConfigError(f'degenerate mask shape {mask_shape}')
    if input_shape != (1, *mask_shape):
        raise er.ConfigError(
            f'segmentation input_shape {input_shape} must be '
            f'(1, {mask_shape[0]}, {mask_shape[1]})')

    rng = hp.substream(spec.seed if spec.seed is not None else seed,
                       'dataset')
    masks = np.empty((spec.n_samples, 1, *mask_shape))
    images = np.empty_like(masks)
    for index in range(spec.n_samples):
        mask = draw_mask(_random_shapes(rng, mask_shape, spec.max_shapes),
                         mask_shape)
        masks[index, 0] = mask
        images[index, 0] = render_image(mask, rng, spec.noise)
    return Dataset(inputs= images, targets= masks, task= 'segmentation')


#######################  IDX files  ###################################

def _read_header(raw, path, magic, header_bytes):
    if len(raw) < header_bytes:
        raise er.IdxTruncatedError(path, header_bytes, len(raw))
    found = struct.unpack('>I', raw[:4])[0]
    if found != magic:
        raise er.IdxFormatError(
            f'{path}: magic 0x{found:08x}, expected 0x{magic:08x}',
            offset= 0)
    n_dims = header_bytes // 4 - 1
    return struct.unpack(f'>{n_dims}I', raw[4:header_bytes])


def read_idx_images(path):
    '''
        (count, rows, cols) uint8 array from an IDX image file
    '''
    path = Path(path)
    raw = path.read_bytes()
    count, rows, cols = _read_header(raw, path, IDX_IMAGE_MAGIC,
                                     IDX_IMAGE_HEADER)
    expected = IDX_IMAGE_HEADER + count * rows * cols
    if len(raw) < expected:
        raise er.IdxTruncatedError(path, expected, len(raw))
    return np.frombuffer(raw, dtype= np.uint8, count= count * rows * cols,
                         offset= IDX_IMAGE_HEADER).reshape(count, rows, cols)


def read_idx_labels(path):
    path = Path(path)
    raw = path.read_bytes()
    (count,) = _read_header(raw, path, IDX_LABEL_MAGIC, IDX_LABEL_HEADER)
    expected = IDX_LABEL_HEADER + count
    if len(raw) < expected:
        raise er.IdxTruncatedError(path, expected, len(raw))
    return np.frombuffer(raw, dtype= np.uint8, count= count,
                         offset= IDX_LABEL_HEADER)


def load_idx_images(path, labels_path= ''):
    '''
        images scaled to [0, 1], shape (N, 1, rows, cols)
        labels from labels_path, or all zero without one
    '''
    images = read_idx_images(path)
    if labels_path:
        labels = read_idx_labels(labels_path).astype(np.int64)
        if labels.shape[0] != images.shape[0]:
            raise er.IdxFormatError(
                f'{images.shape[0]} images but {labels.shape[0]} labels '
                f'in {labels_path}', offset= 4)
    else:
        labels = np.zeros(images.shape[0], dtype= np.int64)
    inputs = images.astype(np.float64)[:, None, :, :] / 255.0
    n_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(inputs= inputs, targets= labels,
                   task= 'classification', n_classes= max(n_classes, 2),
                   meta= {'path': str(path)})


def write_idx(path, images= None, labels= None):
    '''
        write uint8 images (N, rows, cols) or labels (N,) as IDX
    '''
    path = Path(path)
    if images is not None:
        images = np.asarray(images, dtype= np.uint8)
        header = struct.pack('>IIII', IDX_IMAGE_MAGIC, *images.shape)
        path.write_bytes(header + images.tobytes())
    else:
        labels = np.asarray(labels, dtype= np.uint8)
        header = struct.pack('>II', IDX_LABEL_MAGIC, labels.shape[0])
        path.write_bytes(header + labels.tobytes())
    return path


def load_dataset(spec, seed= 0):
    if spec.kind == 'synthetic_classification':
        return gen_synthetic_classification(spec, seed)
    if spec.kind == 'synthetic_segmentation':
        return gen_synthetic_segmentation(spec, seed)
    if spec.kind == 'idx_images':
        if not spec.path:
            raise er.ConfigError('dataset.path is required for idx_images')
        dataset = load_idx_images(spec.path, spec.labels_path)
        if spec.n_samples and spec.n_samples < len(dataset):
            keep = slice(0, spec.n_samples)
            dataset = Dataset(dataset.inputs[keep], dataset.targets[keep],
                              dataset.task, dataset.n_classes, dataset.meta)
        return dataset
    raise er.ConfigError(
        f'dataset.kind must be one of {DATASET_KINDS}, got {spec.kind}')
