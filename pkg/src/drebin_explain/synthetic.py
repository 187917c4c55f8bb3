"""Generator for Drebin-like labeled corpora with planted discriminative features.

Real Drebin data is not redistributable, so tests and the experiment
scripts use these corpora instead.  Every sample is a set of prefixed
feature strings; most features are class-independent background noise,
a handful are planted to be far more frequent in malware (or benign)
apps, and each malware family carries its own signature strings.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .featurespace import (
    BENIGN,
    MALWARE,
    FeatureVocabulary,
    LabeledDataset,
    build_vocabulary,
    vectorize,
)

_BACKGROUND_PREFIXES = (
    ("feature", "android.hardware.{}"),
    ("permission", "android.permission.P{}"),
    ("activity", "com.app.Activity{}"),
    ("service", "com.app.Service{}"),
    ("receiver", "com.app.Receiver{}"),
    ("provider", "com.app.Provider{}"),
    ("intent", "android.intent.action.A{}"),
    ("api_call", "android/api/Call{}"),
    ("real_permission", "android.permission.P{}"),
    ("call", "Class;->method{}"),
    ("url", "host{}.example.com"),
)

MALICIOUS_STRINGS = (
    "permission::android.permission.SEND_SMS",
    "real_permission::android.permission.SEND_SMS",
    "call::SmsManager;->sendTextMessage",
    "call::TelephonyManager;->getDeviceId",
    "api_call::android/telephony/TelephonyManager;->getSubscriberId",
    "intent::android.provider.Telephony.SMS_RECEIVED",
    "url::cnc.malicious.example",
    "permission::android.permission.READ_SMS",
)

BENIGN_STRINGS = (
    "feature::android.hardware.touchscreen",
    "intent::android.intent.category.LAUNCHER",
    "activity::com.app.SettingsActivity",
    "api_call::android/app/Activity;->setContentView",
)


@dataclass
class SyntheticConfig:
    n_samples: int = 2000
    malware_fraction: float = 0.3
    n_background: int = 200
    background_rate: tuple = (0.01, 0.3)
    malicious_rate: tuple = (0.55, 0.85)
    malicious_benign_rate: tuple = (0.01, 0.05)
    benign_rate: tuple = (0.5, 0.8)
    benign_malware_rate: tuple = (0.05, 0.15)
    n_families: int = 6
    family_signature_size: int = 2
    family_signature_rate: float = 0.9
    seed: int = 0


@dataclass
class SyntheticCorpus:
    dataset: LabeledDataset
    vocabulary: FeatureVocabulary
    strings: list
    planted_malicious: list = field(default_factory=list)
    planted_benign: list = field(default_factory=list)
    family_signatures: dict = field(default_factory=dict)

    def write(self, directory) -> str:
        """Write one sample file per app plus ``labels.csv``; returns the manifest path."""
        os.makedirs(directory, exist_ok=True)
        manifest = os.path.join(directory, "labels.csv")
        with open(manifest, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sha", "label", "family"])
            for name, y, fam, strings in zip(self.dataset.names, self.dataset.labels,
                                             self.dataset.families, self.strings):
                with open(os.path.join(directory, name), "w", encoding="utf-8", newline="\n") as out:
                    out.write("".join(s + "\n" for s in strings))
                writer.writerow([name, "malware" if y == MALWARE else "benign", fam])
        return manifest


def make_corpus(config: SyntheticConfig | None = None, **overrides) -> SyntheticCorpus:
    cfg = config or SyntheticConfig()
    for k, v in overrides.items():
        setattr(cfg, k, v)
    rng = np.random.default_rng(cfg.seed)

    background = []
    for k in range(cfg.n_background):
        prefix, pattern = _BACKGROUND_PREFIXES[k % len(_BACKGROUND_PREFIXES)]
        background.append(f"{prefix}::{pattern.format(k)}")
    families = [f"Family{chr(ord('A') + f)}" for f in range(cfg.n_families)]
    signatures = {
        fam: [f"{prefix}::sig.{fam.lower()}.{s}"
              for s, prefix in zip(range(cfg.family_signature_size), ("service", "receiver", "url", "call"))]
        for fam in families
    }

    n_mal = int(round(cfg.n_samples * cfg.malware_fraction))
    labels = np.array([MALWARE] * n_mal + [BENIGN] * (cfg.n_samples - n_mal))
    labels = labels[rng.permutation(cfg.n_samples)]
    # Zipf-like family sizes so the by-count ordering is meaningful
    fam_weights = 1.0 / np.arange(1, cfg.n_families + 1)
    fam_weights /= fam_weights.sum()

    bg_rate = rng.uniform(*cfg.background_rate, size=len(background))
    mal_rate = rng.uniform(*cfg.malicious_rate, size=len(MALICIOUS_STRINGS))
    mal_in_benign = rng.uniform(*cfg.malicious_benign_rate, size=len(MALICIOUS_STRINGS))
    ben_rate = rng.uniform(*cfg.benign_rate, size=len(BENIGN_STRINGS))
    ben_in_mal = rng.uniform(*cfg.benign_malware_rate, size=len(BENIGN_STRINGS))

    strings, fams, names = [], [], []
    for i, y in enumerate(labels):
        present = [s for s, p in zip(background, bg_rate) if rng.random() < p]
        malware = y == MALWARE
        for s, pm, pb in zip(MALICIOUS_STRINGS, mal_rate, mal_in_benign):
            if rng.random() < (pm if malware else pb):
                present.append(s)
        for s, pb, pm in zip(BENIGN_STRINGS, ben_rate, ben_in_mal):
            if rng.random() < (pm if malware else pb):
                present.append(s)
        family = ""
        if malware and cfg.n_families:
            family = families[rng.choice(cfg.n_families, p=fam_weights)]
            present += [s for s in signatures[family] if rng.random() < cfg.family_signature_rate]
        strings.append(sorted(set(present)))
        fams.append(family)
        names.append(f"app{i:06d}")

    vocab = build_vocabulary(strings + [list(MALICIOUS_STRINGS), list(BENIGN_STRINGS)])
    ds = LabeledDataset(tuple(vectorize(s, vocab) for s in strings), labels,
                        tuple(fams), tuple(names), vocab.dim)
    return SyntheticCorpus(
        ds, vocab, strings,
        [vocab.index[s] for s in MALICIOUS_STRINGS],
        [vocab.index[s] for s in BENIGN_STRINGS],
        {fam: [vocab.index[s] for s in sig if s in vocab.index] for fam, sig in signatures.items()},
    )
