from .artifact import KIND_CLASSIFIER, KIND_PREFERENCE, ModelArtifact, deserialize, serialize
from .microbench import MicroBenchResult, micro_bench
from .preference import PreferenceNet, predict_weights, train_preference
from .text import HashedNgramClassifier, HashingNgramVectorizer, classify, featurize, train_classifier

__all__ = [
    "HashedNgramClassifier",
    "HashingNgramVectorizer",
    "KIND_CLASSIFIER",
    "KIND_PREFERENCE",
    "MicroBenchResult",
    "ModelArtifact",
    "PreferenceNet",
    "classify",
    "deserialize",
    "featurize",
    "micro_bench",
    "predict_weights",
    "serialize",
    "train_classifier",
    "train_preference",
]
