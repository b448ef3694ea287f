"""Driver identification from vehicle telemetry with a from-scratch convolutional-recurrent network."""

__version__ = "0.1.0"

from .features import EncodedSegments, EncodingConfig, encode_many, encode_trajectory
from .model import ArchitectureConfig, DCRNN
from .resolution import affinity_propagation, ami, estimation_error, latent_trajectory, resolution_experiment
from .sampling import DatasetManifest, SamplingParams, sample
from .similarity import MatchThreshold, SimilarityMatrix, pairwise_similarity, similarity_score
from .synth import StyleProfile, SynthConfig, generate_dataset
from .training import TrainConfig, accuracy, evaluate, predict_segment, predict_trajectory, train
from .trajectory import DataPoint, PreprocessConfig, Trajectory, parse_trajectories, preprocess

__all__ = [
    "ArchitectureConfig", "DCRNN", "DataPoint", "DatasetManifest", "EncodedSegments", "EncodingConfig",
    "MatchThreshold", "PreprocessConfig", "SamplingParams", "SimilarityMatrix", "StyleProfile", "SynthConfig",
    "TrainConfig", "Trajectory", "accuracy", "affinity_propagation", "ami", "encode_many", "encode_trajectory",
    "estimation_error", "evaluate", "generate_dataset", "latent_trajectory", "pairwise_similarity",
    "parse_trajectories", "predict_segment", "predict_trajectory", "preprocess", "resolution_experiment",
    "sample", "similarity_score", "train",
]
