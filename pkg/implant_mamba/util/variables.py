import enum

import numpy as np


class LOG(str, enum.Enum):
    Core = 'Core'
    Scan = 'Scan'
    Mamba = 'Mamba'
    Net = 'Net'
    Phantom = 'Phantom'
    Train = 'Train'
    Eval = 'Eval'
    Ablate = 'Ablate'
    Check = 'Check'
    Bench = 'Bench'
    Cli = 'Cli'


class ErrorCode(enum.IntEnum):
    """ exit codes of the command line, one per exception family """
    OK = 0
    UNKNOWN = 1
    CONTRACT = 10
    DIMENSION = 11
    DEGENERATE_GEOMETRY = 12
    NUMERICAL = 20
    NON_FINITE_LOSS = 21
    GRADCHECK = 30
    CONTAINER_FORMAT = 40
    INTEGRITY = 41


class DType(str, enum.Enum):
    f32 = 'f32'
    f64 = 'f64'

    @property
    def numpy(self):
        return np.dtype(np.float32) if self is DType.f32 else np.dtype(np.float64)

    @property
    def tag(self):
        # u8 tag of the IMTN container
        return 0 if self is DType.f32 else 1

    @classmethod
    def from_numpy(cls, dtype):
        dtype = np.dtype(dtype)
        if dtype == np.float32:
            return cls.f32
        if dtype == np.float64:
            return cls.f64
        raise ValueError(f'unsupported dtype {dtype}')


class ScanOrder(str, enum.Enum):
    RasterDHW = 'raster-DHW'
    RasterWHD = 'raster-WHD'


class Split(str, enum.Enum):
    Train = 'train'
    Test = 'test'


# reference partition: 1369 train / 253 test
REFERENCE_TRAIN_COUNT = 1369
REFERENCE_TEST_COUNT = 253
REFERENCE_SPLIT = (REFERENCE_TRAIN_COUNT / (REFERENCE_TRAIN_COUNT + REFERENCE_TEST_COUNT),
                   REFERENCE_TEST_COUNT / (REFERENCE_TRAIN_COUNT + REFERENCE_TEST_COUNT))

# side of generated cubes; training crops of the input extent are cut from them
DATASET_EXTENT = 48

METRICS_COLUMNS = ('epoch', 'dice_loss', 'slope_loss', 'total', 'eval_dice', 'eval_iou',
                   'eval_slope_mae', 'eval_angular_err_deg', 'degenerate_sample_count')
ABLATION_COLUMNS = ('row', 'layer1', 'layer2', 'layer3', 'layer4', 'scp', 'dice', 'iou', 'params')
BENCH_COLUMNS = ('variant', 'L', 'N', 'elems_per_sec')
SAMPLE_COLUMNS = ('index', 'dice', 'iou', 'slope_mae', 'angular_err_deg', 'degenerate')
EVAL_COLUMNS = ('split', 'samples', 'eval_dice', 'eval_iou', 'eval_slope_mae', 'eval_angular_err_deg',
                'degenerate_sample_count')
