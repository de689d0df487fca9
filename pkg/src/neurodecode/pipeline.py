"""Raw paired signals -> aligned EEG / acoustic feature corpora."""
from __future__ import annotations

from .acoustic import AcousticFrameSpec, acoustic_features, align_lengths
from .dataset import LABEL_NAMES, LabeledCorpus, LabeledExample, select_channels, split_corpus
from .dsp import EEGFeatureExtractor
from .signals import FeatureSequence, as_float32_exact


def _rounded(seq: FeatureSequence) -> FeatureSequence:
    return FeatureSequence(as_float32_exact(seq.values), seq.frame_rate_hz, seq.column_names)


def example_features(eeg, audio=None, channels=None, target_kind="mfcc+gfcc",
                     extractor: EEGFeatureExtractor | None = None,
                     acoustic_spec: AcousticFrameSpec = AcousticFrameSpec()):
    """EEG features (and, given audio, acoustic targets) truncated to a common length.

    Values are rounded to float32 so that stored corpora round-trip exactly.
    """
    extractor = extractor or EEGFeatureExtractor()
    if channels is not None:
        eeg = select_channels(eeg, channels)
    eeg_feats = extractor.transform_one(eeg)
    if audio is None or target_kind is None:
        return _rounded(eeg_feats), None
    ac = acoustic_features(audio, target_kind, acoustic_spec)
    eeg_feats, ac = align_lengths(eeg_feats, ac)
    return _rounded(eeg_feats), _rounded(ac)


def build_feature_corpus(ids, eegs, audios, labels, channels=None, target_kind="mfcc+gfcc",
                         extractor=None, split_seed=0, fractions=(0.7, 0.1, 0.2)) -> LabeledCorpus:
    examples = []
    for ex_id, eeg, audio, label in zip(ids, eegs, audios, labels):
        e, a = example_features(eeg, audio, channels, target_kind, extractor)
        examples.append(LabeledExample(ex_id, int(label), LABEL_NAMES[label], e, a))
    n_labels = max(labels) + 1
    return split_corpus(LabeledCorpus(examples, n_labels), fractions, split_seed)
