"""Pipeline glue: cached feature extraction, fold training, model bundles,
and the JSON model envelope."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cnn as cnn_mod
from . import trees
from .audio_io import AudioClip, ClipRecord, Manifest, pad_to_min_length, read_wav, resample
from .augment import AugmentationPlan, execute_assignment, plan_augmentation
from .config import PipelineConfig
from .dsp import ImpulseResponse, stft_power, synthetic_room_ir
from .encoding import DEFAULT_SCHEMA, MinMaxScaler, encode_record
from .evaluation import ensemble_predict
from .features import (FeatureKind, FeatureMatrix, MelParams, load_feature_matrix,
                       mel_spectrogram_db, mfcc, pool_features, save_feature_matrix,
                       spectral_contrast)

FORMAT_VERSION = 1
MODEL_KINDS = ("extratrees", "hgb", "cnn", "ensemble")

_KIND_SUFFIX = {FeatureKind.MEL_SPECTROGRAM_DB: "mel",
                FeatureKind.MFCC: "mfcc",
                FeatureKind.SPECTRAL_CONTRAST: "contrast"}


def mel_params(cfg: PipelineConfig) -> MelParams:
    return MelParams(n_fft=cfg.n_fft, hop=cfg.hop, n_mels=cfg.n_mels)


def feature_param_hash(cfg: PipelineConfig) -> str:
    """Fingerprint of every parameter that changes feature values."""
    key = (f"sr{cfg.sample_rate}|{mel_params(cfg).cache_key()}|mfcc{cfg.n_mfcc}|"
           f"sc{cfg.contrast_bands}-{cfg.contrast_quantile}-{cfg.contrast_base_hz}")
    return hashlib.sha256(key.encode()).hexdigest()[:12]


def load_clip(file_path: str, cfg: PipelineConfig, base_dir: str | Path = ".") -> AudioClip:
    clip = read_wav(Path(base_dir) / file_path)
    clip = resample(clip, cfg.sample_rate)
    clip, _ = pad_to_min_length(clip, cfg.n_fft)
    return clip


def extract_features(clip: AudioClip, cfg: PipelineConfig) -> dict[FeatureKind, FeatureMatrix]:
    params = mel_params(cfg)
    # one STFT shared by all three extractors (they use the same n_fft/hop)
    power = stft_power(clip, params.n_fft, params.hop, centered=True)
    mel = mel_spectrogram_db(clip, params, power)
    return {
        FeatureKind.MEL_SPECTROGRAM_DB: mel,
        FeatureKind.MFCC: mfcc(clip, cfg.n_mfcc, params, power, log_mel_db=mel),
        FeatureKind.SPECTRAL_CONTRAST: spectral_contrast(
            clip, cfg.contrast_bands, cfg.contrast_quantile,
            cfg.contrast_base_hz, cfg.n_fft, cfg.hop, power),
    }


class FeatureCache:
    """On-disk feature store keyed by clip_id and the feature-parameter hash.

    Loaded entries are also kept in memory for the lifetime of the cache
    object: cross-validation revisits each clip once per fold, so this turns
    k-1 of every k disk reads into dictionary lookups."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = Path(cfg.cache_dir) / feature_param_hash(cfg)
        self._mem: dict[str, dict[FeatureKind, FeatureMatrix]] = {}

    def _path(self, clip_id: str, kind: FeatureKind) -> Path:
        return self.root / f"{clip_id}.{_KIND_SUFFIX[kind]}.fmx"

    def has(self, clip_id: str) -> bool:
        return clip_id in self._mem or \
            all(self._path(clip_id, k).exists() for k in FeatureKind)

    def load(self, clip_id: str) -> dict[FeatureKind, FeatureMatrix]:
        feats = self._mem.get(clip_id)
        if feats is None:
            feats = {k: load_feature_matrix(self._path(clip_id, k))
                     for k in FeatureKind}
            self._mem[clip_id] = feats
        return feats

    def store(self, clip_id: str, feats: dict[FeatureKind, FeatureMatrix]) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        for kind, fm in feats.items():
            save_feature_matrix(self._path(clip_id, kind), fm)
        self._mem[clip_id] = feats

    def ensure(self, manifest: Manifest, base_dir: str | Path,
               jobs: int = 1) -> dict[str, int]:
        """Extract any missing clips; returns hit/miss/failure counts."""
        stats = {"hits": 0, "computed": 0, "failed": 0}
        todo = []
        for rec in manifest.records:
            if self.has(rec.clip_id):
                stats["hits"] += 1
            else:
                todo.append(rec)

        def work(rec: ClipRecord):
            clip = load_clip(rec.file_path, self.cfg, base_dir)
            self.store(rec.clip_id, extract_features(clip, self.cfg))

        if jobs > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = {pool.submit(work, rec): rec for rec in todo}
                for fut, rec in futures.items():
                    try:
                        fut.result()
                        stats["computed"] += 1
                    except (OSError, ValueError):
                        stats["failed"] += 1
        else:
            for rec in todo:
                try:
                    work(rec)
                    stats["computed"] += 1
                except (OSError, ValueError):
                    stats["failed"] += 1
        return stats


def build_ir_pool(cfg: PipelineConfig) -> list[ImpulseResponse]:
    """Synthetic room IRs at a ladder of reverberation times."""
    rt60s = [0.15, 0.3, 0.5, 0.8, 1.2, 1.6, 2.0, 2.5]
    return [synthetic_room_ir(rt60s[i % len(rt60s)], cfg.sample_rate, seed=101 + i)
            for i in range(cfg.ir_pool_size)]


# --- fold-local training data ------------------------------------------------

@dataclass
class TrainingSet:
    """Everything one fold's fit sees: originals plus augmented copies."""

    clip_ids: list[str]
    labels: np.ndarray
    participant_ids: list[str]
    features: list[dict[FeatureKind, FeatureMatrix]]
    plan: AugmentationPlan | None


def assemble_training_set(train_ids: list[str], manifest: Manifest,
                          cache: FeatureCache, cfg: PipelineConfig,
                          base_dir: str | Path, seed: int) -> TrainingSet:
    """Load cached features for the training clips, then extend with
    augmented copies (white noise at drawn SNR / room-IR convolution).
    Augmented clips inherit the source clip's label and participant."""
    by_id = {r.clip_id: r for r in manifest.records}
    ids = list(train_ids)
    labels = [by_id[i].label for i in ids]
    pids = [by_id[i].participant_id for i in ids]
    feats = [cache.load(i) for i in ids]

    plan = None
    if cfg.augment and cfg.aug_fraction > 0:
        plan = plan_augmentation(sorted(train_ids), cfg.aug_fraction, cfg.aug_split,
                                 cfg.aug_ratio_low, cfg.aug_ratio_high,
                                 cfg.ir_pool_size, seed)
        ir_pool = build_ir_pool(cfg)

        def aug_features(a) -> dict[FeatureKind, FeatureMatrix]:
            # cache key covers everything the augmented audio depends on
            key = f"{a.clip_id}+aug.s{a.seed}.{a.method}.p{a.parameter!r}"
            if cache.has(key):
                return cache.load(key)
            clip = load_clip(by_id[a.clip_id].file_path, cfg, base_dir)
            out = extract_features(execute_assignment(a, clip, ir_pool), cfg)
            cache.store(key, out)
            return out

        if cfg.jobs > 1 and len(plan.assignments) > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                aug_feats = list(pool.map(aug_features, plan.assignments))
        else:
            aug_feats = [aug_features(a) for a in plan.assignments]
        for a, fa in zip(plan.assignments, aug_feats):
            rec = by_id[a.clip_id]
            ids.append(f"{a.clip_id}+aug")
            labels.append(rec.label)
            pids.append(rec.participant_id)
            feats.append(fa)
    return TrainingSet(clip_ids=ids, labels=np.asarray(labels, dtype=np.int64),
                       participant_ids=pids, features=feats, plan=plan)


# --- tree-model feature vectors ----------------------------------------------

class TreeVectorizer:
    """Pooled acoustic statistics concatenated with the encoded tabular row;
    numeric tabular slots are min-max scaled with training-fold statistics."""

    def __init__(self):
        self.scaler: MinMaxScaler | None = None
        self.numeric_slots = DEFAULT_SCHEMA.numeric_slot_indices()

    def _raw_vector(self, feats, tabular_row) -> np.ndarray:
        pooled = [pool_features(feats[k]) for k in (
            FeatureKind.MEL_SPECTROGRAM_DB, FeatureKind.MFCC,
            FeatureKind.SPECTRAL_CONTRAST)]
        return np.concatenate(pooled + [encode_record(tabular_row)])

    def fit(self, training: TrainingSet, manifest: Manifest) -> np.ndarray:
        X = np.stack([
            self._raw_vector(f, manifest.tabular[pid])
            for f, pid in zip(training.features, training.participant_ids)])
        offset = X.shape[1] - DEFAULT_SCHEMA.width()
        cols = [offset + s for s in self.numeric_slots]
        self.scaler = MinMaxScaler().fit(X[:, cols])
        X[:, cols] = self.scaler.transform(X[:, cols])
        return X

    def transform_one(self, feats, tabular_row) -> np.ndarray:
        if self.scaler is None:
            raise RuntimeError("vectorizer not fitted")
        v = self._raw_vector(feats, tabular_row)
        offset = len(v) - DEFAULT_SCHEMA.width()
        cols = [offset + s for s in self.numeric_slots]
        v[cols] = self.scaler.transform(v[cols])
        return v

    def to_dict(self) -> dict:
        return {"mins": self.scaler.mins.tolist(), "maxs": self.scaler.maxs.tolist(),
                "slots": DEFAULT_SCHEMA.slot_names()}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeVectorizer":
        vec = cls()
        vec.scaler = MinMaxScaler(mins=np.asarray(d["mins"]), maxs=np.asarray(d["maxs"]))
        return vec


def prepare_cnn_input(feats: dict[FeatureKind, FeatureMatrix],
                      input_width: int = 64, freq_pool: int = 1) -> np.ndarray:
    img = cnn_mod.prepare_mel_image(feats[FeatureKind.MEL_SPECTROGRAM_DB].values,
                                    target_width=input_width,
                                    freq_pool=freq_pool)
    return img[None, :, :]  # single channel


# --- model bundles -------------------------------------------------------------

@dataclass
class ModelBundle:
    """A trained model plus whatever it needs at inference time."""

    kind: str
    model: object
    vectorizer: TreeVectorizer | None = None
    members: list["ModelBundle"] | None = None
    history: cnn_mod.TrainHistory | None = None

    def predict_one(self, feats, tabular_row: dict[str, str] | None) -> float:
        if self.kind == "ensemble":
            return ensemble_predict([m.predict_one(feats, tabular_row)
                                     for m in self.members])
        if self.kind == "cnn":
            x = prepare_cnn_input(feats, self.model.input_width,
                                  self.model.freq_pool)[None, ...]
            return float(cnn_mod.predict_proba(self.model, x)[0])
        if tabular_row is None:
            raise ValueError(f"{self.kind} model needs the participant's tabular row")
        v = self.vectorizer.transform_one(feats, tabular_row)
        return float(self.model.predict_proba(v[None, :])[0])

    def predict_many(self, feats_list, tabular_rows) -> np.ndarray:
        if self.kind == "cnn":
            x = np.stack([prepare_cnn_input(f, self.model.input_width,
                                            self.model.freq_pool)
                          for f in feats_list])
            return cnn_mod.predict_proba(self.model, x)
        if self.kind == "ensemble":
            member_probs = [m.predict_many(feats_list, tabular_rows)
                            for m in self.members]
            return np.mean(member_probs, axis=0)
        X = np.stack([self.vectorizer.transform_one(f, row)
                      for f, row in zip(feats_list, tabular_rows)])
        return self.model.predict_proba(X)

    def payload(self) -> dict:
        if self.kind == "ensemble":
            return {"members": [{"model_kind": m.kind, "payload": m.payload()}
                                for m in self.members]}
        if self.kind == "cnn":
            return cnn_mod.model_to_dict(self.model)
        return {"model": self.model.to_dict(), "vectorizer": self.vectorizer.to_dict()}


def train_bundle(kind: str, training: TrainingSet, manifest: Manifest,
                 cfg: PipelineConfig, seed: int) -> ModelBundle:
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if kind == "ensemble":
        members = [train_bundle(k, training, manifest, cfg, seed)
                   for k in ("extratrees", "hgb", "cnn")]
        return ModelBundle(kind="ensemble", model=None, members=members)
    if kind == "cnn":
        x = np.stack([prepare_cnn_input(f, cfg.cnn_input_width,
                                        cfg.cnn_freq_pool)
                      for f in training.features])
        cnn_cfg = cnn_mod.CnnConfig(
            channels=cfg.cnn_channel_tuple(), kernel=cfg.cnn_kernel,
            dropout=cfg.cnn_dropout,
            batch_size=cfg.cnn_batch, max_lr=cfg.cnn_lr, epochs=cfg.cnn_epochs,
            weight_decay=cfg.cnn_weight_decay)
        model, history = cnn_mod.cnn_train(x, training.labels, cnn_cfg, seed)
        model.freq_pool = cfg.cnn_freq_pool
        model.input_width = cfg.cnn_input_width
        return ModelBundle(kind="cnn", model=model, history=history)

    vectorizer = TreeVectorizer()
    X = vectorizer.fit(training, manifest)
    y = training.labels
    if kind == "extratrees":
        params = trees.ExtraTreesParams(
            n_trees=cfg.et_trees, min_samples_leaf=cfg.et_min_leaf,
            max_depth=cfg.et_max_depth or None,
            k_features=cfg.et_k_features or None)
        model = trees.extra_trees_fit(X, y, params, seed=seed)
    else:
        params = trees.HgbParams(n_iter=cfg.hgb_iters, learning_rate=cfg.hgb_lr,
                                 max_depth=cfg.hgb_depth, max_leaf=cfg.hgb_leaf,
                                 l2=cfg.hgb_l2)
        model = trees.hgb_fit(X, y, params)
    return ModelBundle(kind=kind, model=model, vectorizer=vectorizer)


# --- model envelope (save / load) ---------------------------------------------

def save_bundle(path: str | Path, bundle: ModelBundle, cfg: PipelineConfig,
                seed: int) -> None:
    envelope = {
        "format_version": FORMAT_VERSION,
        "model_kind": bundle.kind,
        "feature_param_hash": feature_param_hash(cfg),
        "created_by_seed": seed,
        "payload": bundle.payload(),
    }
    Path(path).write_text(json.dumps(envelope, sort_keys=True, indent=1),
                          encoding="utf-8")


def _bundle_from_payload(kind: str, payload: dict) -> ModelBundle:
    if kind == "ensemble":
        members = [_bundle_from_payload(m["model_kind"], m["payload"])
                   for m in payload["members"]]
        return ModelBundle(kind="ensemble", model=None, members=members)
    if kind == "cnn":
        return ModelBundle(kind="cnn", model=cnn_mod.model_from_dict(payload))
    if kind == "extratrees":
        model = trees.ExtraTreesModel.from_dict(payload["model"])
    else:
        model = trees.HgbModel.from_dict(payload["model"])
    return ModelBundle(kind=kind, model=model,
                       vectorizer=TreeVectorizer.from_dict(payload["vectorizer"]))


def load_bundle(path: str | Path, cfg: PipelineConfig | None = None) -> ModelBundle:
    envelope = json.loads(Path(path).read_text(encoding="utf-8"))
    if envelope.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {envelope.get('format_version')}")
    if cfg is not None and envelope["feature_param_hash"] != feature_param_hash(cfg):
        raise ValueError(
            f"feature parameter hash mismatch: model {envelope['feature_param_hash']}"
            f" vs config {feature_param_hash(cfg)}")
    return _bundle_from_payload(envelope["model_kind"], envelope["payload"])


# --- splits --------------------------------------------------------------------

def grouped_holdout_split(manifest: Manifest, holdout: float,
                          seed: int) -> tuple[list[str], list[str]]:
    """80/20-style split by participant so no one straddles the boundary."""
    if not 0.0 < holdout < 1.0:
        raise ValueError("holdout fraction must lie in (0, 1)")
    pids = sorted(manifest.participants())
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pids))
    n_test = max(1, round(holdout * len(pids)))
    test_pids = {pids[i] for i in order[:n_test]}
    train_ids = [r.clip_id for r in manifest.records
                 if r.participant_id not in test_pids]
    test_ids = [r.clip_id for r in manifest.records
                if r.participant_id in test_pids]
    return train_ids, test_ids


def predict_ids(bundle: ModelBundle, ids: list[str], manifest: Manifest,
                cache: FeatureCache) -> np.ndarray:
    by_id = {r.clip_id: r for r in manifest.records}
    feats = [cache.load(i) for i in ids]
    rows = [manifest.tabular.get(by_id[i].participant_id) for i in ids]
    return bundle.predict_many(feats, rows)
