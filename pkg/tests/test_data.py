import numpy as np
import pytest

import func_module.autograd_func as ag
import func_module.data_func as dt
import func_module.errors_func as er
import func_module.loss_func as lf
import func_module.mbs_func as mb
import func_module.optim_func as op


def _classification(n_samples= 33, n_classes= 3, seed= None):
    return dt.DatasetSpec(n_samples= n_samples, input_shape= (5,),
                          n_classes= n_classes, seed= seed)


def _segmentation(n_samples= 4):
    return dt.DatasetSpec(kind= 'synthetic_segmentation',
                          n_samples= n_samples, input_shape= (1, 6, 6),
                          mask_shape= (6, 6))


#######################  synthetic classification  ####################

def test_classification_is_a_function_of_the_seed():
    first = dt.gen_synthetic_classification(_classification(), seed= 5)
    again = dt.gen_synthetic_classification(_classification(), seed= 5)
    other = dt.gen_synthetic_classification(_classification(), seed= 6)
    np.testing.assert_array_equal(first.inputs, again.inputs)
    np.testing.assert_array_equal(first.targets, again.targets)
    assert not np.array_equal(first.inputs, other.inputs)


def test_dataset_seed_overrides_the_run_seed():
    spec = _classification(seed= 11)
    np.testing.assert_array_equal(
        dt.gen_synthetic_classification(spec, seed= 1).inputs,
        dt.gen_synthetic_classification(spec, seed= 2).inputs)


@pytest.mark.parametrize('n_samples, n_classes', [(33, 3), (33, 4), (7, 2)])
def test_classes_are_balanced(n_samples, n_classes):
    dataset = dt.gen_synthetic_classification(
        _classification(n_samples, n_classes), seed= 0)
    counts = np.bincount(dataset.targets, minlength= n_classes)
    assert counts.sum() == n_samples
    assert counts.max() - counts.min() <= 1
    assert dataset.task == 'classification'
    assert dataset.input_shape == (5,)


def test_classification_needs_two_classes():
    with pytest.raises(er.ConfigError):
        dt.gen_synthetic_classification(_classification(n_classes= 1))


def test_degenerate_classification_shape():
    with pytest.raises(er.ConfigError):
        dt.gen_synthetic_classification(
            dt.DatasetSpec(n_samples= 0, input_shape= (4,)))


#######################  synthetic segmentation  ######################

def test_draw_mask_rect_and_disk():
    mask = dt.draw_mask([('rect', 0, 0, 2, 3), ('disk', 4.0, 4.0, 1.0)],
                        (6, 6))
    assert mask[:2, :3].sum() == 6.0
    # disk of radius 1: the center and its four neighbours
    assert mask[3:6, 3:6].sum() == 5.0
    assert mask.sum() == 11.0


def test_draw_mask_unknown_shape():
    with pytest.raises(ValueError):
        dt.draw_mask([('triangle', 0, 0)], (4, 4))


def test_segmentation_targets_are_binary_masks():
    dataset = dt.gen_synthetic_segmentation(_segmentation(), seed= 3)
    assert dataset.inputs.shape == (4, 1, 6, 6)
    assert dataset.targets.shape == (4, 1, 6, 6)
    assert set(np.unique(dataset.targets)) <= {0.0, 1.0}
    assert dataset.task == 'segmentation'


def test_segmentation_is_reproducible():
    first = dt.gen_synthetic_segmentation(_segmentation(), seed= 8)
    again = dt.gen_synthetic_segmentation(_segmentation(), seed= 8)
    np.testing.assert_array_equal(first.inputs, again.inputs)
    np.testing.assert_array_equal(first.targets, again.targets)


def test_segmentation_input_must_be_one_channel_of_the_mask():
    spec = _segmentation()
    spec.input_shape = (3, 6, 6)
    with pytest.raises(er.ConfigError):
        dt.gen_synthetic_segmentation(spec)


#######################  batches  #####################################

def test_batch_slice_is_a_contiguous_copy():
    dataset = dt.gen_synthetic_classification(_classification(), seed= 0)
    part = dataset.all().slice(3, 9)
    assert len(part) == 6
    assert part.inputs.flags['C_CONTIGUOUS']
    part.inputs[...] = 0.0
    assert dataset.inputs[3:9].any()


#######################  IDX files  ###################################

def _idx_images(tmp_path, count= 3):
    images = np.arange(count * 4 * 5, dtype= np.uint8).reshape(count, 4, 5)
    return images, dt.write_idx(tmp_path / 'images.idx', images= images)


def test_idx_images_and_labels(tmp_path):
    images, image_path = _idx_images(tmp_path)
    label_path = dt.write_idx(tmp_path / 'labels.idx', labels= [0, 2, 1])
    np.testing.assert_array_equal(dt.read_idx_images(image_path), images)
    np.testing.assert_array_equal(dt.read_idx_labels(label_path), [0, 2, 1])

    dataset = dt.load_idx_images(image_path, label_path)
    assert dataset.inputs.shape == (3, 1, 4, 5)
    assert dataset.inputs.max() <= 1.0
    assert dataset.n_classes == 3


def test_idx_bad_magic(tmp_path):
    path = dt.write_idx(tmp_path / 'labels.idx', labels= [1, 2] * 10)
    with pytest.raises(er.IdxFormatError) as info:
        dt.read_idx_images(path)
    assert info.value.offset == 0


def test_idx_truncated_file(tmp_path):
    _, path = _idx_images(tmp_path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-30])
    with pytest.raises(er.IdxTruncatedError) as info:
        dt.read_idx_images(path)
    assert info.value.expected == len(raw)
    assert info.value.actual == len(raw) - 30


def test_idx_truncated_header(tmp_path):
    path = tmp_path / 'short.idx'
    path.write_bytes(b'\x00\x00\x08')
    with pytest.raises(er.IdxTruncatedError):
        dt.read_idx_labels(path)


def test_idx_label_count_mismatch(tmp_path):
    _, image_path = _idx_images(tmp_path)
    label_path = dt.write_idx(tmp_path / 'labels.idx', labels= [0, 1])
    with pytest.raises(er.IdxFormatError):
        dt.load_idx_images(image_path, label_path)


def test_load_dataset_idx_keeps_the_first_samples(tmp_path):
    _, image_path = _idx_images(tmp_path, count= 5)
    spec = dt.DatasetSpec(kind= 'idx_images', n_samples= 2,
                          path= str(image_path))
    dataset = dt.load_dataset(spec)
    assert len(dataset) == 2


def test_load_dataset_requires_a_path():
    with pytest.raises(er.ConfigError):
        dt.load_dataset(dt.DatasetSpec(kind= 'idx_images'))


def test_load_dataset_unknown_kind():
    with pytest.raises(er.ConfigError):
        dt.load_dataset(dt.DatasetSpec(kind= 'cifar'))


def test_background_and_foreground_masks():
    assert dt.draw_mask([], (4, 5)).sum() == 0.0
    assert dt.draw_mask([('rect', 0, 0, 4, 5)], (4, 5)).sum() == 20.0


def test_ground_truth_predictor_scores_iou_one():
    dataset = dt.gen_synthetic_segmentation(_segmentation(6), seed= 4)
    pair = lf.MaskPair(dataset.targets.copy(), dataset.targets)
    assert lf.iou(pair) == 1.0


def test_well_separated_clusters_are_learned_by_a_linear_model():
    spec = dt.DatasetSpec(n_samples= 90, input_shape= (5,), n_classes= 3,
                          separation= 20.0)
    dataset = dt.gen_synthetic_classification(spec, seed= 12)
    params, model = ag.build_model(ag.ModelSpec(layers= [ag.Dense(5, 3)]),
                                   (5,), seed= 12)
    state = op.make_state('sgd', params, lr= 0.1)
    for epoch in range(20):
        mb.train_epoch(model, params, dataset, 16, 16, 'exact_weighted',
                       'cross_entropy', state, seed= 12, epoch= epoch)
    result = mb.evaluate(model, params, dataset, 90, 'cross_entropy')
    assert result['accuracy'] >= 0.99
