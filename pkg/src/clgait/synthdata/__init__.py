from .walker import IdentityParams, SensorConfig, sample_identity
from .dataset import (
    Dataset,
    GaitSequence,
    SequenceRecord,
    generate_dataset,
    read_dataset,
    synth_walker,
)
from .pseudo import pseudo_pairs_from_depth
