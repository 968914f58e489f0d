from .cache import TokenCache, cache_read, cache_write
from .features import avg_psd, segment_avg_psd, segment_covariance, zscore
from .filters import BANDS, FilterBank, apply_filter, design_bandpass
from .grid import EpochGrid, build_epoch_grid, compute_grids, enrich_recording, filter_recording
from .recording import Recording, read_recording, write_recording
from .synthetic import centroid_accuracy, generate_synthetic_dataset
