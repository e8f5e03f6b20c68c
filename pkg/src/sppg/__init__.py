"""Discovery of non-categorical phone patterns in L2 speech.

Pipeline: MFCC features -> alignment-based segment slicing -> CNN+GRU
segment classifier -> segmental phonetic posterior-grams -> multi-peak
pattern discovery -> perceptual listening tests.
"""

from .audio import AudioFormatError, AudioSignal, cut_clip, read_wav, write_wav
from .classifier import (ModelConfig, Sppg, SegmentClassifier, TrainConfig,
                         TrainingLog, batch_sppg, evaluate, read_sppg_file,
                         train, write_sppg_file)
from .corpus import (PhoneInventory, PhoneSegment, SegmentDataset,
                     SegmentFeatureSequence, fold, load_phn, slice_segments,
                     split_train_validation)
from .discovery import (DEFAULT_THETA, NonCatPattern, PatternSetDiff,
                        SegmentVerdict, aggregate_patterns, canonical_name,
                        classify_segment, compare_pattern_sets, find_peaks,
                        max_peaks, select_exemplars)
from .features import FeatureConfig, FrameFeatureMatrix, compute_mfcc
from .perceptual import (ConfusionGroup, ConfusionScores, OptionShares,
                         ResponseRecord, average_shares, build_group,
                         export_report, tally)
from .service import ListeningService, make_server

__all__ = [name for name in dir() if not name.startswith("_")]
