"""Decoding isolated speech from dry-electrode EEG.

EEG is band-passed, notch-filtered and reduced to windowed statistics; a
GRU network learns to regress MFCC/GFCC acoustic features from it, and its
recurrent layers are then transplanted (frozen) into a GRU + TCN classifier.
"""
from .acoustic import AcousticFeatureExtractor, AcousticFrameSpec, gfcc, mfcc
from .dataset import LabeledCorpus, LabeledExample, SynthSpec, generate_synthetic_corpus, split_corpus
from .dsp import EEGFeatureExtractor, design_bandpass, design_notch, extract_eeg_features
from .estimators import EEGAcousticRegressor, SpeechClassifier
from .models import (TrainConfig, build_classifier, build_regression_model, run_grid,
                     train_classifier, train_regression, transplant_weights)
from .signals import FeatureSequence, MultichannelSignal

__version__ = "0.1.0"

__all__ = [
    "AcousticFeatureExtractor", "AcousticFrameSpec", "EEGAcousticRegressor", "EEGFeatureExtractor",
    "FeatureSequence", "LabeledCorpus", "LabeledExample", "MultichannelSignal", "SpeechClassifier",
    "SynthSpec", "TrainConfig", "build_classifier", "build_regression_model", "design_bandpass",
    "design_notch", "extract_eeg_features", "generate_synthetic_corpus", "gfcc", "mfcc",
    "run_grid", "split_corpus", "train_classifier", "train_regression", "transplant_weights",
]
