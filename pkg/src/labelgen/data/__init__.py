from .augment import AugmentConfig, augment, resize
from .batches import E_TA, E_TAG, E_TS, SETTINGS, Batch, Pool, make_batches
from .folder import export_corpus, label_to_dirname, load_corpus
from .registry import (
    EXTERNAL_TEST,
    DEFAULT_DATASETS,
    DEFAULT_TASKS,
    TRAIN_VAL_TEST,
    Corpus,
    DatasetSpec,
    Registry,
    Sample,
    TaskSpec,
    register_default_layout,
)
from .synth import nearest_centroid_accuracy, synth_all, synth_generate
