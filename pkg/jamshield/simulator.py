"""Behavioral emulator of the over-the-air jamming testbed.

Produces labeled cross-layer telemetry streams (one sample per tick) for
benign traffic and constant, random or reactive jammers. The model works in
the power domain only: received powers from a log-distance path loss, a
per-waveform interference offset, SINR, and a logistic packet-error curve
that drives every link and application metric. All coefficients come from
`config.SIMULATOR_PARAMS` and `config.FEATURE_NOISE`.
"""

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .config import DEFAULT_SEED, FEATURE_NOISE, SIMULATOR_PARAMS
from .errors import ConfigError
from .io_utils import read_json
from .schema import BENIGN_LABEL, ClassLabel, FeatureManifest, LabeledSample, variant_for

logger = logging.getLogger(__name__)

WAVEFORMS = ("awgn", "cos", "sine", "triangle", "pulse", "sawtooth", "square")
SIM_JAMMER_KINDS = ("none", "constant", "random", "reactive")
GEOMETRIES = ("los", "nlos")
GAIN_RANGE = (10.0, 30.0)

GainSchedule = List[Tuple[float, float]]


@dataclass
class ScenarioConfig:
    duration: float
    tick: float = SIMULATOR_PARAMS["tick_s"]
    jammer_kind: str = "none"
    waveform: str = "awgn"
    gain_dbi: Union[float, GainSchedule] = 20.0
    geometry: str = "los"
    reactive_threshold_dbm: float = SIMULATOR_PARAMS["reactive_threshold_dbm"]
    seed: int = DEFAULT_SEED
    mean_on_s: float = SIMULATOR_PARAMS["random_mean_on_s"]
    mean_off_s: float = SIMULATOR_PARAMS["random_mean_off_s"]
    pulse_duty: float = SIMULATOR_PARAMS["pulse_duty"]
    distance_m: float = SIMULATOR_PARAMS["distance_m"]
    traffic_duty: float = SIMULATOR_PARAMS["traffic_duty"]

    @property
    def dynamic_gain(self) -> bool:
        return not isinstance(self.gain_dbi, (int, float))

    @property
    def n_ticks(self) -> int:
        return int(math.floor(self.duration / self.tick + 1e-9))

    def gain_at(self, time_s: float) -> float:
        if not self.dynamic_gain:
            return float(self.gain_dbi)
        current = self.gain_dbi[0][1]
        for start, gain in self.gain_dbi:
            if start <= time_s:
                current = gain
        return float(current)

    def nominal_gain(self) -> Optional[float]:
        return None if self.dynamic_gain else float(self.gain_dbi)

    def validate(self) -> None:
        if not self.duration > 0:
            raise ConfigError(f"Scenario duration must be > 0, got {self.duration}")
        if not self.tick > 0:
            raise ConfigError(f"Scenario tick must be > 0, got {self.tick}")
        if self.jammer_kind not in SIM_JAMMER_KINDS:
            raise ConfigError(f"Unknown jammer kind '{self.jammer_kind}', expected one of {SIM_JAMMER_KINDS}")
        if self.waveform not in WAVEFORMS:
            raise ConfigError(f"Unknown waveform '{self.waveform}', expected one of {WAVEFORMS}")
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"Unknown geometry '{self.geometry}', expected one of {GEOMETRIES}")

        gains = [g for _, g in self.gain_dbi] if self.dynamic_gain else [self.gain_dbi]
        if self.dynamic_gain:
            if not self.gain_dbi:
                raise ConfigError("Gain schedule is empty")
            starts = [s for s, _ in self.gain_dbi]
            if starts != sorted(starts):
                raise ConfigError(f"Gain schedule start times must be non-decreasing: {starts}")
        for gain in gains:
            if not GAIN_RANGE[0] <= gain <= GAIN_RANGE[1]:
                raise ConfigError(f"Gain {gain} dBi outside [{GAIN_RANGE[0]}, {GAIN_RANGE[1]}]")

        if self.mean_on_s <= 0 or self.mean_off_s <= 0:
            raise ConfigError("Random jammer holding-time means must be > 0")
        if not 0 < self.pulse_duty <= 1:
            raise ConfigError(f"Pulse duty must be in (0, 1], got {self.pulse_duty}")
        if self.distance_m < 1.0:
            raise ConfigError(f"Distance must be >= 1 m (reference distance), got {self.distance_m}")
        if not 0 <= self.traffic_duty <= 1:
            raise ConfigError(f"Traffic duty must be in [0, 1], got {self.traffic_duty}")

    @classmethod
    def from_dict(cls, payload: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"Unknown scenario field(s): {sorted(unknown)}")
        if "duration" not in payload:
            raise ConfigError("Scenario requires 'duration'")
        data = dict(payload)
        gain = data.get("gain_dbi")
        if isinstance(gain, list):
            try:
                data["gain_dbi"] = [(float(s), float(g)) for s, g in gain]
            except (TypeError, ValueError) as e:
                raise ConfigError(f"Gain schedule must be a list of [start_s, gain] pairs: {e}") from e
        config = cls(**data)
        config.validate()
        return config

    def to_dict(self) -> dict:
        data = asdict(self)
        if self.dynamic_gain:
            data["gain_dbi"] = [list(pair) for pair in self.gain_dbi]
        return data


def load_scenarios(path: Path, seed: Optional[int] = None) -> List[ScenarioConfig]:
    """Read a scenario file: one ScenarioConfig object or {"segments": [...]}.

    A `seed` argument overrides the file; segment i then gets seed + i.
    """
    payload = read_json(path)
    entries = payload["segments"] if isinstance(payload, dict) and "segments" in payload else [payload]
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{Path(path).name}: no scenario segments found")

    configs = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ConfigError(f"{Path(path).name}: segment {i} is not an object")
        config = ScenarioConfig.from_dict(entry)
        if seed is not None:
            config = replace(config, seed=seed + i)
        configs.append(config)
    return configs


@dataclass(frozen=True)
class ChannelState:
    ambient_noise_dbm: float
    legitimate_signal_dbm: float
    jammer_rx_dbm: Optional[float]
    channel_energy_dbm: float
    sinr_db: float
    traffic_active: bool = True

    @property
    def interference_dbm(self) -> float:
        """Noise plus jamming power at the victim receiver."""
        total = dbm_to_mw(self.ambient_noise_dbm)
        if self.jammer_rx_dbm is not None:
            total += dbm_to_mw(self.jammer_rx_dbm)
        return mw_to_dbm(total)

    @property
    def sensed_energy_dbm(self) -> float:
        """Energy a listening reactive jammer observes: everything except its own emission."""
        total = dbm_to_mw(self.ambient_noise_dbm)
        if self.traffic_active:
            total += dbm_to_mw(self.legitimate_signal_dbm)
        return mw_to_dbm(total)


@dataclass(frozen=True)
class JammerState:
    active: bool
    kind: str
    next_toggle_s: float = math.inf


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    return 10.0 * math.log10(mw)


def path_loss_db(geometry: str, distance_m: float) -> float:
    """Log-distance path loss with a fixed obstruction penalty for NLOS."""
    exponent = SIMULATOR_PARAMS["path_loss_exponent"][geometry]
    loss = SIMULATOR_PARAMS["reference_loss_db"] + 10.0 * exponent * math.log10(distance_m)
    if geometry == "nlos":
        loss += SIMULATOR_PARAMS["nlos_penalty_db"]
    return loss


def waveform_offset_db(waveform: str, pulse_duty: float) -> float:
    if waveform == "pulse":
        return 10.0 * math.log10(pulse_duty)
    return SIMULATOR_PARAMS["waveform_offset_db"][waveform]


def jammer_rx_dbm(config: ScenarioConfig, time_s: float) -> float:
    return (
        config.gain_at(time_s)
        + waveform_offset_db(config.waveform, config.pulse_duty)
        - path_loss_db(config.geometry, config.distance_m)
    )


def initial_jammer_state(config: ScenarioConfig, rng: Optional[np.random.Generator] = None) -> JammerState:
    if config.jammer_kind == "constant":
        return JammerState(active=True, kind="constant")
    if config.jammer_kind == "random":
        first = rng.exponential(config.mean_off_s) if rng is not None else config.mean_off_s
        return JammerState(active=False, kind="random", next_toggle_s=first)
    return JammerState(active=False, kind=config.jammer_kind)


def jammer_decision(
    state: JammerState,
    channel: Optional[ChannelState],
    config: ScenarioConfig,
    time_s: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> JammerState:
    """Jammer activity for the tick starting at `time_s`, given the previous tick's channel."""
    kind = state.kind
    if kind == "none":
        return replace(state, active=False)
    if kind == "constant":
        return replace(state, active=True)
    if kind == "reactive":
        if channel is None:
            return replace(state, active=False)
        return replace(state, active=channel.sensed_energy_dbm > config.reactive_threshold_dbm)

    # random: continuous-time on/off process sampled at tick instants
    active = state.active
    next_toggle = state.next_toggle_s
    while time_s >= next_toggle:
        active = not active
        mean = config.mean_on_s if active else config.mean_off_s
        hold = rng.exponential(mean) if rng is not None else mean
        next_toggle += hold
    return JammerState(active=active, kind=kind, next_toggle_s=next_toggle)


def step_channel(
    prev: Optional[ChannelState],
    jammer: JammerState,
    config: ScenarioConfig,
    time_s: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> ChannelState:
    """Power terms for one tick. Without an rng the channel is the noiseless mean."""
    params = SIMULATOR_PARAMS
    ambient = params["ambient_noise_dbm"]
    legitimate = params["legitimate_signal_dbm"]
    traffic_active = True
    if rng is not None:
        legitimate += rng.normal(0.0, params["shadowing_sigma_db"])
        traffic_active = bool(rng.random() < config.traffic_duty)

    jam = jammer_rx_dbm(config, time_s) if jammer.active else None

    interference_mw = dbm_to_mw(ambient) + (dbm_to_mw(jam) if jam is not None else 0.0)
    energy_mw = interference_mw + (dbm_to_mw(legitimate) if traffic_active else 0.0)

    return ChannelState(
        ambient_noise_dbm=ambient,
        legitimate_signal_dbm=legitimate,
        jammer_rx_dbm=jam,
        channel_energy_dbm=mw_to_dbm(energy_mw),
        sinr_db=legitimate - mw_to_dbm(interference_mw),
        traffic_active=traffic_active,
    )


def packet_error_rate(sinr_db: float) -> float:
    return float(expit(-(sinr_db - SIMULATOR_PARAMS["per_midpoint_db"]) / SIMULATOR_PARAMS["per_slope_db"]))


@dataclass(frozen=True)
class TrafficParams:
    tick_s: float = SIMULATOR_PARAMS["tick_s"]
    offered_load_mbps: float = SIMULATOR_PARAMS["offered_load_mbps"]
    packet_bytes: int = SIMULATOR_PARAMS["packet_bytes"]
    retry_limit: int = SIMULATOR_PARAMS["retry_limit"]

    @property
    def packets_per_tick(self) -> float:
        return self.offered_load_mbps * 1e6 * self.tick_s / (8.0 * self.packet_bytes)


@dataclass(frozen=True)
class LinkLatent:
    """Expected per-tick link quantities derived from one channel state."""

    channel: ChannelState
    traffic: TrafficParams
    per: float
    retries_per_packet: float
    failed_fraction: float
    phy_rate_mbps: float
    busy_fraction: float

    @property
    def packets(self) -> float:
        return self.traffic.packets_per_tick

    @property
    def tick_ms(self) -> float:
        return self.traffic.tick_s * 1000.0


def link_latent(channel: ChannelState, traffic: TrafficParams) -> LinkLatent:
    params = SIMULATOR_PARAMS
    per = packet_error_rate(channel.sinr_db)
    limit = traffic.retry_limit
    if per < 1.0:
        retries = per * (1.0 - per ** limit) / (1.0 - per)
    else:
        retries = float(limit)

    phy_rate = max(1.0, params["max_phy_rate_mbps"] * float(expit((channel.sinr_db - 20.0) / 4.0)))
    airtime_s = traffic.packets_per_tick * (1.0 + retries) * traffic.packet_bytes * 8.0 / (phy_rate * 1e6)
    busy = airtime_s / traffic.tick_s
    if channel.jammer_rx_dbm is not None:
        busy += float(expit((channel.jammer_rx_dbm - params["cca_threshold_dbm"]) / 2.0))

    return LinkLatent(
        channel=channel,
        traffic=traffic,
        per=per,
        retries_per_packet=retries,
        failed_fraction=per ** (limit + 1),
        phy_rate_mbps=phy_rate,
        busy_fraction=min(busy, 1.0),
    )


def _rtt_ms(z: LinkLatent) -> float:
    return SIMULATOR_PARAMS["base_rtt_ms"] + SIMULATOR_PARAMS["slot_rtt_ms"] * z.retries_per_packet


# feature name -> expected value given the latent link state
FEATURE_RULES: Dict[str, Callable[[LinkLatent], float]] = {
    "rssi_dbm": lambda z: z.channel.legitimate_signal_dbm,
    "snr_db": lambda z: z.channel.sinr_db,
    "noise_floor_dbm": lambda z: z.channel.interference_dbm,
    "channel_busy_fraction": lambda z: z.busy_fraction,
    "tx_phy_rate_mbps": lambda z: z.phy_rate_mbps,
    "rx_phy_rate_mbps": lambda z: z.phy_rate_mbps * 0.95,
    "signal_avg_dbm": lambda z: z.channel.legitimate_signal_dbm - 0.5,
    "beacon_rssi_dbm": lambda z: z.channel.legitimate_signal_dbm - 2.0,
    "channel_energy_dbm": lambda z: z.channel.channel_energy_dbm,
    "cca_busy_ms": lambda z: z.busy_fraction * z.tick_ms,
    "tx_power_dbm": lambda z: SIMULATOR_PARAMS["tx_power_dbm"],
    "mcs_index": lambda z: 7.0 * z.phy_rate_mbps / SIMULATOR_PARAMS["max_phy_rate_mbps"],
    "tx_packets": lambda z: z.packets * (1.0 + z.retries_per_packet),
    "rx_packets": lambda z: z.packets * (1.0 - z.per),
    "tx_bytes": lambda z: z.packets * (1.0 + z.retries_per_packet) * z.traffic.packet_bytes,
    "rx_bytes": lambda z: z.packets * (1.0 - z.per) * z.traffic.packet_bytes,
    "tx_retries": lambda z: z.packets * z.retries_per_packet,
    "tx_failed": lambda z: z.packets * z.failed_fraction,
    "rx_fcs_errors": lambda z: z.packets * (1.0 + z.retries_per_packet) * z.per,
    "rx_dropped": lambda z: z.packets * max(z.per - z.failed_fraction, 0.0),
    "beacon_loss": lambda z: SIMULATOR_PARAMS["beacons_per_tick"] * z.per,
    "ack_timeouts": lambda z: 0.9 * z.packets * z.retries_per_packet,
    "retry_ratio": lambda z: z.retries_per_packet / (1.0 + z.retries_per_packet),
    "fcs_error_ratio": lambda z: z.per,
    "rts_failures": lambda z: 0.5 * z.packets * z.per ** 2,
    "tx_airtime_ms": lambda z: z.tick_ms * min(
        z.packets * (1.0 + z.retries_per_packet) * z.traffic.packet_bytes * 8.0 / (z.phy_rate_mbps * 1e6) / z.traffic.tick_s,
        1.0,
    ),
    "rx_airtime_ms": lambda z: z.tick_ms * min(
        z.packets * (1.0 - z.per) * z.traffic.packet_bytes * 8.0 / (z.phy_rate_mbps * 1e6) / z.traffic.tick_s,
        1.0,
    ),
    "inactive_time_ms": lambda z: (1.0 - z.busy_fraction) * z.tick_ms,
    "udp_throughput_up_mbps": lambda z: z.traffic.offered_load_mbps * (1.0 - z.per),
    "udp_throughput_down_mbps": lambda z: z.traffic.offered_load_mbps * (1.0 - z.per),
    "probe_rtt_mean_ms": _rtt_ms,
    "probe_rtt_p95_ms": lambda z: _rtt_ms(z) + 2.0 * SIMULATOR_PARAMS["slot_rtt_ms"] * z.retries_per_packet + 1.0,
    "probe_rtt_min_ms": lambda z: SIMULATOR_PARAMS["base_rtt_ms"] * (1.0 + 0.2 * z.per),
    "jitter_ms": lambda z: 0.2 + 0.6 * SIMULATOR_PARAMS["slot_rtt_ms"] * z.retries_per_packet,
    "loss_fraction": lambda z: z.per,
    "offered_load_mbps": lambda z: z.traffic.offered_load_mbps,
    "reorder_rate": lambda z: 0.2 * z.per * (1.0 - z.per),
    "probe_loss_fraction": lambda z: z.per,
    "goodput_ratio": lambda z: 1.0 - z.per,
    "out_of_order_packets": lambda z: z.packets * 0.2 * z.per * (1.0 - z.per),
}


def check_manifest_supported(manifest: FeatureManifest) -> None:
    missing = [name for name in manifest.names if name not in FEATURE_RULES]
    if missing:
        raise ConfigError(f"No generative rule for feature(s): {missing}")


def features_from_state(
    channel: ChannelState,
    traffic: TrafficParams,
    manifest: FeatureManifest,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Feature vector in manifest order; expected values when no rng is given."""
    latent = link_latent(channel, traffic)
    values = np.empty(len(manifest))
    for i, feature in enumerate(manifest.features):
        rule = FEATURE_RULES.get(feature.name)
        if rule is None:
            raise ConfigError(f"No generative rule for feature '{feature.name}'")
        value = rule(latent)
        if rng is not None:
            value += rng.normal(0.0, FEATURE_NOISE.get(feature.name, 0.0))
            if feature.unit == "fraction":
                value = min(max(value, 0.0), 1.0)
            elif "dB" not in feature.unit:
                value = max(value, 0.0)
        values[i] = value
    return values


def label_for(config: ScenarioConfig) -> Optional[ClassLabel]:
    """Attack label used for ticks where the jammer is active."""
    if config.jammer_kind == "none":
        return None
    variant = variant_for(
        config.jammer_kind,
        config.waveform,
        config.nominal_gain(),
        config.geometry,
        config.dynamic_gain,
    )
    return ClassLabel(config.jammer_kind, variant)


def simulate(config: ScenarioConfig, manifest: FeatureManifest, start_time: float = 0.0) -> List[LabeledSample]:
    """Run one scenario; each tick is labeled by the jammer's ground-truth activity."""
    config.validate()
    check_manifest_supported(manifest)

    rng = np.random.default_rng(config.seed)
    traffic = TrafficParams(tick_s=config.tick)
    attack_label = label_for(config)

    jammer = initial_jammer_state(config, rng)
    channel = None
    samples = []
    for i in range(config.n_ticks):
        time_s = i * config.tick
        jammer = jammer_decision(jammer, channel, config, time_s, rng)
        channel = step_channel(channel, jammer, config, time_s, rng)
        values = features_from_state(channel, traffic, manifest, rng)
        label = attack_label if jammer.active else BENIGN_LABEL
        samples.append(LabeledSample(timestamp=start_time + time_s, values=values, label=label))

    active = sum(1 for s in samples if s.label.binary)
    logger.debug(
        f"Simulated {len(samples)} ticks ({config.jammer_kind}/{config.waveform}, seed {config.seed}): "
        f"{active} jammed"
    )
    return samples


def simulate_segments(configs: Sequence[ScenarioConfig], manifest: FeatureManifest) -> List[LabeledSample]:
    """Concatenate scenario runs into one stream with monotone timestamps."""
    samples = []
    offset = 0.0
    for config in configs:
        samples.extend(simulate(config, manifest, start_time=offset))
        offset += config.n_ticks * config.tick
    logger.info(f"Simulated {len(configs)} segment(s), {len(samples)} ticks")
    return samples


def _jammer_segment(kind: str, waveform: str, geometry: str, rng: np.random.Generator,
                    duration: float, seed: int) -> ScenarioConfig:
    low, high = GAIN_RANGE
    if kind == "random" or (kind == "constant" and rng.random() < 0.3):
        steps = sorted(rng.uniform(0.0, duration, size=2).tolist())
        gains = rng.uniform(low, high, size=3).round(1).tolist()
        gain: Union[float, GainSchedule] = [(0.0, gains[0]), (steps[0], gains[1]), (steps[1], gains[2])]
    else:
        gain = float(round(rng.uniform(low, high), 1))
    return ScenarioConfig(
        duration=duration,
        jammer_kind=kind,
        waveform=waveform,
        gain_dbi=gain,
        geometry=geometry,
        seed=seed,
    )


def mixed_dataset(
    manifest: FeatureManifest,
    benign_ticks: int = 30000,
    attack_ticks: int = 10000,
    seed: int = DEFAULT_SEED,
    segment_s: float = 60.0,
) -> List[LabeledSample]:
    """Benign traffic interleaved with every jammer kind, waveform and geometry at gains 10-30 dBi.

    Exactly `benign_ticks` benign and `attack_ticks` attack samples; ticks
    past a class quota are dropped so the stream keeps its time order.
    """
    rng = np.random.default_rng(seed)
    combos = itertools.cycle(itertools.product(("constant", "random", "reactive"), WAVEFORMS, GEOMETRIES))
    quota = {0: benign_ticks, 1: attack_ticks}
    taken = {0: 0, 1: 0}
    samples: List[LabeledSample] = []
    offset = 0.0
    segment = 0

    while taken[0] < quota[0] or taken[1] < quota[1]:
        if segment % 2 == 0 or taken[1] >= quota[1]:
            config = ScenarioConfig(duration=segment_s, seed=seed + 1000 + segment)
        else:
            kind, waveform, geometry = next(combos)
            config = _jammer_segment(kind, waveform, geometry, rng, segment_s, seed + 1000 + segment)
        for sample in simulate(config, manifest, start_time=offset):
            cls = sample.label.binary
            if taken[cls] < quota[cls]:
                samples.append(sample)
                taken[cls] += 1
        offset += config.n_ticks * config.tick
        segment += 1

    logger.info(f"Mixed dataset: {taken[0]} benign + {taken[1]} attack ticks from {segment} segments")
    return samples


def drift_segments(seed: int = DEFAULT_SEED, block_s: float = 30.0, blocks_per_phase: int = 10) -> List[ScenarioConfig]:
    """Benign/constant-AWGN blocks, then benign/reactive-pulse blocks with a gain drop."""
    configs = []
    for phase in range(2):
        for block in range(blocks_per_phase):
            block_seed = seed + 100 * phase + block
            if block % 2 == 0:
                configs.append(ScenarioConfig(duration=block_s, seed=block_seed))
            elif phase == 0:
                configs.append(ScenarioConfig(duration=block_s, jammer_kind="constant", waveform="awgn",
                                              gain_dbi=25.0, geometry="los", seed=block_seed))
            else:
                configs.append(ScenarioConfig(duration=block_s, jammer_kind="reactive", waveform="pulse",
                                              gain_dbi=10.0, geometry="nlos", seed=block_seed))
    return configs


def drift_stream(manifest: FeatureManifest, seed: int = DEFAULT_SEED, block_s: float = 30.0,
                 blocks_per_phase: int = 10) -> Tuple[List[LabeledSample], float]:
    """The drift stream and the timestamp where the second phase starts."""
    configs = drift_segments(seed, block_s, blocks_per_phase)
    samples = simulate_segments(configs, manifest)
    boundary = sum(c.n_ticks * c.tick for c in configs[:blocks_per_phase])
    return samples, boundary
