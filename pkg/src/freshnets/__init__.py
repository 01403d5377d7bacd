"""Compact CNNs with frequency-domain hashed weight sharing.

The package is a small numpy library plus a training CLI. Filters of a
compressed convolution layer are represented by a short shared weight
vector indexed by seeded hashes of DCT coefficient positions, with
frequency-aware bucket budgets; everything trains with exact gradients.
"""

from .dct import DctPlan, dct2, dct2_batch, get_plan, idct2, idct2_batch
from .errors import (
    AllocationError,
    ConfigError,
    FreshnetsError,
    ModelFormatError,
    ShapeError,
    TrainingDiverged,
)
from .hashing import (
    BandAllocation,
    HashKey,
    allocate_buckets,
    band_of,
    band_sizes,
    bucket_index,
    derive_layer_seed,
    hash64,
    sign_hash,
)
from .baselines import (
    DropFreqConv,
    LrdConv,
    SpatialHashedConv,
    dropfilt_spec,
)
from .fresh_layer import FreshConv, HashedFC
from .layers import ConvBlock, DenseConv, FcBlock, Network
from .model_io import load_model, save_model, serialize_model
from .netspec import (
    Compression,
    LayerSpec,
    NetworkSpec,
    build,
    cifar_spec,
    mnist_desk_spec,
)
from .training import (
    Dataset,
    TrainConfig,
    TrainResult,
    evaluate,
    load_idx,
    load_mnist_arrays,
    make_dataset,
    normalize,
    sgd_step,
    train,
)

__version__ = "0.1.0"
