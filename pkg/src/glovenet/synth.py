"""Synthetic multi-IMU gesture generator.

Five finger-mounted 6-channel sensors (3-axis accelerometer + 3-axis
gyroscope each), S = 30 channels total. Two vocabularies:

* ``single``: 8 whole-hand gestures + null (C = 9). Every finger performs
  the same class motion template.
* ``multi``: 10 finger-specific gestures + null (C = 11). Each class is a
  per-finger amplitude/frequency pattern; two class pairs differ only in a
  single finger's movement, and two classes involve no thumb/index/middle
  motion at all.

A gesture motion is a train of 1-3 Gaussian-windowed sinusoid bursts.
Sensors pick up their own finger's motion at full strength plus adjacent
fingers' motion attenuated by a mechanical coupling factor, the way a
glove transmits movement through the hand. The null class is sensor noise
plus slow baseline drift only.

Determinism: sample i is generated from an rng seeded by (stream tag,
user seed, i), so per-sample generation can run in any order, serial or
parallel, with identical output bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GestureDataset
from .errors import UsageError

SENSOR_NAMES = ("thumb", "index", "middle", "ring", "pinky")
CHANNELS_PER_SENSOR = 6
N_SENSORS = len(SENSOR_NAMES)
TOTAL_CHANNELS = N_SENSORS * CHANNELS_PER_SENSOR

SAMPLE_RATE_HZ = 50.0
DEFAULT_SESSION_SIZE = 25
TRIALS_PER_SUBJECT = 8

NOISE_STD = 0.05
DRIFT_MAX_AMP = 0.08
COUPLING = 0.35   # fraction of a neighboring finger's motion a sensor reads

_SAMPLE_STREAM = 0x61F0
_TEMPLATE_STREAM = 0x0D14


@dataclass(frozen=True)
class FingerMotion:
    """Motion of one finger within a gesture class."""

    amp: float
    freq: float          # oscillation cycles per window
    n_bursts: int = 1


@dataclass(frozen=True)
class VocabularySpec:
    name: str
    class_names: tuple[str, ...]
    # one dict per class: finger index -> FingerMotion; class 0 (null) is empty
    class_motions: tuple[dict[int, FingerMotion], ...]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def active_fingers(self, class_id: int) -> tuple[int, ...]:
        return tuple(sorted(self.class_motions[class_id]))


_SINGLE_FREQS = (1.5, 2.1, 2.8, 3.6, 4.5, 5.5, 6.6, 7.8)
_SINGLE_BURSTS = (1, 2, 3, 1, 2, 3, 1, 2)

# multi-vocabulary frequency bank (cycles per window)
_F1, _F2, _F3, _F4, _F5 = 1.6, 2.4, 3.4, 4.6, 6.0


def single_vocabulary() -> VocabularySpec:
    motions: list[dict[int, FingerMotion]] = [{}]
    for freq, bursts in zip(_SINGLE_FREQS, _SINGLE_BURSTS):
        m = FingerMotion(amp=1.0, freq=freq, n_bursts=bursts)
        motions.append({f: m for f in range(N_SENSORS)})
    names = ("null",) + tuple(f"gesture_{i:02d}" for i in range(1, 9))
    return VocabularySpec("single", names, tuple(motions))


def multi_vocabulary() -> VocabularySpec:
    """Finger-specific vocabulary.

    Classes 1/2 differ only in the index finger's movement and classes 3/4
    only in the middle finger's; classes 5/6 involve no thumb, index or
    middle motion (ring+pinky only). Every class pair differs on at least
    one of index/middle/ring, so with adjacent-finger coupling any three
    sensors retain a view of every distinction.
    """
    a = 1.0

    def m(freq: float, bursts: int = 1) -> FingerMotion:
        return FingerMotion(amp=a, freq=freq, n_bursts=bursts)

    motions: tuple[dict[int, FingerMotion], ...] = (
        {},                                                         # 0 null
        {0: m(_F1), 1: m(_F2), 3: m(_F4)},                          # 1
        {0: m(_F1), 1: m(_F5), 3: m(_F4)},                          # 2 = 1 but index
        {1: m(_F4), 2: m(_F2), 4: m(_F3)},                          # 3
        {1: m(_F4), 4: m(_F3)},                                     # 4 = 3 but middle
        {3: m(_F2), 4: m(_F5)},                                     # 5 ring+pinky only
        {3: m(_F5), 4: m(_F2)},                                     # 6 ring+pinky only
        {0: m(_F3), 2: m(_F5), 4: m(_F1)},                          # 7
        {1: m(_F1), 2: m(_F3), 3: m(_F5)},                          # 8
        {0: m(_F5, 2), 1: m(_F3, 2), 2: m(_F1, 2), 3: m(_F2, 2),
         4: m(_F4, 2)},                                             # 9 all fingers
        {0: m(_F2), 2: m(_F4), 3: m(_F1)},                          # 10
    )
    names = ["null"]
    for cid in range(1, 11):
        sig = "".join(SENSOR_NAMES[f][0] for f in sorted(motions[cid]))
        names.append(f"gesture_{cid:02d}_{sig}")
    return VocabularySpec("multi", tuple(names), motions)


_VOCABULARIES = {"single": single_vocabulary, "multi": multi_vocabulary}


def get_vocabulary(name: str) -> VocabularySpec:
    try:
        return _VOCABULARIES[name]()
    except KeyError:
        raise UsageError(
            f"unknown vocabulary {name!r}; expected one of {sorted(_VOCABULARIES)}"
        ) from None


def _coupling_matrix() -> np.ndarray:
    w = np.eye(N_SENSORS)
    for f in range(N_SENSORS - 1):
        w[f, f + 1] = COUPLING
        w[f + 1, f] = COUPLING
    return w


def _direction(vocab_id: int, class_id: int, finger: int) -> np.ndarray:
    """Fixed per-(class, finger) channel direction vector, unit RMS."""
    rng = np.random.default_rng([_TEMPLATE_STREAM, vocab_id, class_id, finger])
    v = rng.normal(0.0, 1.0, CHANNELS_PER_SENSOR)
    return v / np.sqrt(np.mean(v * v))


def _burst_train(rng: np.random.Generator, window: int, motion: FingerMotion,
                 amp_scale: float, freq_scale: float) -> np.ndarray:
    tau = np.arange(window, dtype=np.float64) / window
    sig = np.zeros(window)
    k = motion.n_bursts
    for b in range(k):
        center = (b + 0.5) / k + rng.uniform(-0.05, 0.05)
        width = rng.uniform(0.10, 0.14) / np.sqrt(k)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        env = np.exp(-0.5 * ((tau - center) / width) ** 2)
        sig += env * np.sin(2.0 * np.pi * motion.freq * freq_scale * tau + phase)
    return motion.amp * amp_scale * sig


def _render_sample(rng: np.random.Generator, vocab: VocabularySpec,
                   vocab_id: int, label: int, window: int,
                   freq_scale: float, coupling: np.ndarray) -> np.ndarray:
    tau = np.arange(window, dtype=np.float64) / window
    x = np.zeros((window, TOTAL_CHANNELS))

    # baseline drift, present in every class
    drift_amp = rng.uniform(0.0, DRIFT_MAX_AMP, TOTAL_CHANNELS)
    drift_freq = rng.uniform(0.2, 0.5, TOTAL_CHANNELS)
    drift_phase = rng.uniform(0.0, 2.0 * np.pi, TOTAL_CHANNELS)
    x += drift_amp * np.sin(2.0 * np.pi * drift_freq * tau[:, None] + drift_phase)

    spec = vocab.class_motions[label]
    if spec:
        amp_global = rng.uniform(0.85, 1.15)
        motions = np.zeros((window, N_SENSORS))
        dirs = np.zeros((N_SENSORS, CHANNELS_PER_SENSOR))
        if vocab.name == "single":
            # one shared template: same waveform, same phase, same direction
            shared = _burst_train(rng, window, spec[0], amp_global, freq_scale)
            d = _direction(vocab_id, label, 0)
            for f in range(N_SENSORS):
                motions[:, f] = shared
                dirs[f] = d
        else:
            for f in sorted(spec):
                finger_amp = amp_global * rng.uniform(0.9, 1.1)
                motions[:, f] = _burst_train(
                    rng, window, spec[f], finger_amp, freq_scale
                )
                dirs[f] = _direction(vocab_id, label, f)
        # sensor f reads own finger plus coupled neighbors
        x += np.einsum("fg,tg,gc->tfc", coupling, motions, dirs).reshape(
            window, TOTAL_CHANNELS
        )

    x += rng.normal(0.0, NOISE_STD, (window, TOTAL_CHANNELS))
    return x.astype(np.float32)


def generate_synthetic(vocabulary: str, n_samples: int, window_length: int = 32,
                       seed: int = 0,
                       session_size: int = DEFAULT_SESSION_SIZE) -> GestureDataset:
    """Generate a balanced synthetic gesture dataset.

    Labels cycle through the classes so counts differ by at most one, and
    every recording session (= trial) contains a mix of classes. Trial ids
    advance every ``session_size`` samples; subjects every
    ``TRIALS_PER_SUBJECT`` trials.
    """
    vocab = get_vocabulary(vocabulary)
    vocab_id = 1 if vocabulary == "single" else 2
    c = vocab.n_classes
    if n_samples < c:
        raise UsageError(
            f"n_samples={n_samples} must be >= number of classes ({c})"
        )
    if window_length < 8:
        raise UsageError(f"window_length must be >= 8, got {window_length}")
    if session_size < 1:
        raise UsageError("session_size must be >= 1")

    max_freq = max(
        (fm.freq for spec in vocab.class_motions for fm in spec.values()),
        default=1.0,
    )
    freq_scale = min(1.0, 0.45 * window_length / max_freq)
    coupling = _coupling_matrix()

    samples = np.empty((n_samples, window_length, TOTAL_CHANNELS), dtype=np.float32)
    labels = np.empty(n_samples, dtype=np.int64)
    for i in range(n_samples):
        rng = np.random.default_rng([_SAMPLE_STREAM, seed, i])
        label = i % c
        labels[i] = label
        samples[i] = _render_sample(
            rng, vocab, vocab_id, label, window_length, freq_scale, coupling
        )

    trial_ids = np.arange(n_samples, dtype=np.int64) // session_size
    subject_ids = trial_ids // TRIALS_PER_SUBJECT
    return GestureDataset(
        name=f"synthetic-{vocabulary}",
        samples=samples,
        labels=labels,
        trial_ids=trial_ids,
        subject_ids=subject_ids,
        class_names=list(vocab.class_names),
        sensor_layout=[(n, CHANNELS_PER_SENSOR) for n in SENSOR_NAMES],
        sample_rate_hz=SAMPLE_RATE_HZ,
    )
