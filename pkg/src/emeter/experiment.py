"""End-to-end measurement experiments against synthetic loads.

This module wires the pieces together: a load profile plays into the sensor
model (window averaging, board transfer error, noise, quantization), the
bus-timing model sets the sample grid, the sampler rules decide which
samples count, and the reference meter supplies ground truth.  The sampling
math is vectorized over the whole run; the register-level loop in
:mod:`emeter.sampler` realizes the identical per-sample semantics and is
cross-checked against this path in the tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from emeter.bus_timing import (
    PROFILES,
    DriverProfile,
    LOOP_OVERHEAD_US,
    TIMESTAMP_CALL_US,
    sample_period_us,
    validate_operating_point,
)
from emeter.buffering import BufferPolicy, make_writer
from emeter.calibration import CalibrationCurve, apply_current, apply_voltage
from emeter.sampler import (
    DEFAULT_WARMUP_SAMPLES,
    FLAG_POWER_SAVE,
    FLAG_SATURATED,
    FLAG_WARMUP,
    PowerModeEvent,
    PowerSaveMode,
    Trace,
    TriggerSpec,
    gated_energy,
    hybrid_energy,
    naive_energy,
)
from emeter.sensor import (
    BOARDS,
    BoardCharacter,
    ConversionTiming,
    DEFAULT_TIMING,
    SHUNT_FULL_SCALE_V,
    SensorConfig,
    conversion_time_us,
)
from emeter.tracefile import TraceHeader, trace_to_records
from emeter.workloads import LoadProfile, exact_energy, generate_profile

DEFAULT_CURRENT_NOISE_A = 20e-6
DEFAULT_VOLTAGE_NOISE_V = 0.2e-3


def pick_pga_divider(max_current_a: float, config_shunt_ohm: float = 0.1) -> int:
    """Smallest divider whose full scale covers the expected peak current."""
    for divider in (1, 2, 4, 8):
        if max_current_a * config_shunt_ohm <= SHUNT_FULL_SCALE_V * divider:
            return divider
    return 8


@dataclass
class PipelineOptions:
    """Knobs of one simulated measurement run."""

    resolution_bits: int = 12
    driver: str = "bcm"
    speed_khz: int = 2500
    supply_voltage: float = 5.0
    pga_divider: Optional[int] = None  # None: auto from the profile peak
    board: str = "shield"
    noise_current_a: float = DEFAULT_CURRENT_NOISE_A
    noise_voltage_v: float = DEFAULT_VOLTAGE_NOISE_V
    warmup_samples: int = DEFAULT_WARMUP_SAMPLES
    seed: int = 0
    buffering: Optional[BufferPolicy] = None
    write_speed_bps: float = 40e6

    def driver_profile(self) -> DriverProfile:
        try:
            return PROFILES[self.driver]
        except KeyError:
            raise ValueError(f"unknown driver {self.driver!r}; have {sorted(PROFILES)}")

    def board_character(self) -> BoardCharacter:
        try:
            return BOARDS[self.board]
        except KeyError:
            raise ValueError(f"unknown board {self.board!r}; have {sorted(BOARDS)}")


@dataclass
class ExperimentReport:
    """Accuracy summary of one run against the reference meter."""

    e_device_j: float
    e_reference_j: float
    error_percent: float
    sample_count: int
    overrun_count: int
    status: str
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "e_device_j": self.e_device_j,
            "e_reference_j": self.e_reference_j,
            "error_percent": self.error_percent,
            "sample_count": self.sample_count,
            "overrun_count": self.overrun_count,
            "status": self.status,
            "config": self.config,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        payload = json.loads(text)
        return cls(e_device_j=payload["e_device_j"],
                   e_reference_j=payload["e_reference_j"],
                   error_percent=payload["error_percent"],
                   sample_count=payload["sample_count"],
                   overrun_count=payload["overrun_count"],
                   status=payload["status"],
                   config=payload["config"])

    def to_text(self) -> str:
        lines = [
            f"device energy    : {self.e_device_j:.6g} J",
            f"reference energy : {self.e_reference_j:.6g} J",
            f"error            : {self.error_percent:.4f} %",
            f"samples          : {self.sample_count}",
            f"overruns         : {self.overrun_count}",
            f"status           : {self.status}",
        ]
        for key in sorted(self.config):
            lines.append(f"{key:17s}: {self.config[key]}")
        return "\n".join(lines)


@dataclass
class PipelineResult:
    trace: Trace
    report: ExperimentReport
    energy_gated_j: float
    energy_naive_j: float
    energy_hybrid_j: Optional[float]
    modes: list
    flush_log: str = ""


def _quantize_currents(sensed: np.ndarray, config: SensorConfig):
    scale = config.max_count / (SHUNT_FULL_SCALE_V * config.pga_divider)
    raw = np.floor(sensed * config.shunt_resistance * scale)
    counts = np.clip(raw, -config.max_count, config.max_count)
    saturated = raw != counts
    amps = counts / (scale * config.shunt_resistance)
    return amps, saturated


def _quantize_bus(sensed: np.ndarray, config: SensorConfig):
    raw = np.floor(sensed * config.max_count / config.bus_range)
    counts = np.clip(raw, 0, config.max_count)
    saturated = raw != counts
    volts = counts * config.bus_range / config.max_count
    return volts, saturated


def run_pipeline(profile: LoadProfile, options: PipelineOptions,
                 trigger: TriggerSpec,
                 calibration: Optional[CalibrationCurve] = None,
                 trace_fh=None,
                 timing: ConversionTiming = DEFAULT_TIMING) -> PipelineResult:
    """Sample a load profile through the simulated measurement chain."""
    driver = options.driver_profile()
    board = options.board_character()
    divider = options.pga_divider or pick_pga_divider(float(profile.current.max()))
    config = SensorConfig(pga_divider=divider,
                          resolution_bits=options.resolution_bits,
                          supply_voltage=options.supply_voltage)
    validate_operating_point(driver, options.speed_khz, config.supply_voltage)

    period_ns = sample_period_us(driver, options.speed_khz, config, timing) * 1000.0
    conv_ns = conversion_time_us(config, timing) * 1000.0
    # timestamp lands after the final ready poll, the shunt read and the
    # bookkeeping; a constant offset past the conversion boundary
    tail_ns = (1.5 * driver.mean_delay_us(options.speed_khz)
               + LOOP_OVERHEAD_US + TIMESTAMP_CALL_US) * 1000.0

    start_ns, stop_ns, status = trigger.window_ns()
    horizon_ns = int(profile.duration * 1e9)
    limit_ns = min(stop_ns, horizon_ns) if stop_ns is not None else horizon_ns

    n_conversions = int((limit_ns - tail_ns) // period_ns) if limit_ns > tail_ns else 0
    if trigger.mode == "count":
        # allow the count to be reached inside the horizon
        n_conversions = min(n_conversions,
                            int(start_ns // period_ns) + trigger.sample_count + 1)
    conv_index = np.arange(1, n_conversions + 1)
    ts = (conv_index * period_ns + tail_ns).astype(np.int64)
    window_end_s = conv_index * period_ns * 1e-9
    window_start_s = window_end_s - conv_ns * 1e-9

    rng = np.random.default_rng(options.seed)
    window = conv_ns * 1e-9
    mean_i = profile.integral_current(window_start_s, window_end_s) / window
    mean_v = profile.integral_voltage(window_start_s, window_end_s) / window
    if board.current_quad != 0.0:
        mean_i2 = profile.integral_current_sq(window_start_s, window_end_s) / window
        sensed_i = board.current_quad * mean_i2 + board.current_gain * mean_i
    else:
        sensed_i = board.current_gain * mean_i
    sensed_v = mean_v + board.voltage_offset
    if options.noise_current_a > 0:
        sensed_i = sensed_i + rng.normal(0.0, options.noise_current_a, len(ts))
    if options.noise_voltage_v > 0:
        sensed_v = sensed_v + rng.normal(0.0, options.noise_voltage_v, len(ts))
    sensed_i = np.maximum(sensed_i, 0.0)

    current, sat_i = _quantize_currents(sensed_i, config)
    bus_v, sat_v = _quantize_bus(sensed_v, config)

    if calibration is not None:
        current = apply_current(calibration, current)
        bus_v = apply_voltage(calibration, bus_v)

    flags = np.zeros(len(ts), dtype=np.uint8)
    flags[sat_i | sat_v] |= FLAG_SATURATED
    flags[conv_index <= options.warmup_samples] |= FLAG_WARMUP

    intervals = []
    for s, e, mode_index in profile.power_save_intervals:
        s_ns = max(int(round(s * 1e9)), start_ns)
        e_ns = min(int(round(e * 1e9)), limit_ns)
        if e_ns > s_ns:
            intervals.append((s_ns, e_ns, mode_index))
    for s_ns, e_ns, _ in intervals:
        flags[(ts >= s_ns) & (ts <= e_ns)] |= FLAG_POWER_SAVE

    in_window = (ts >= start_ns) & (ts <= limit_ns)
    if trigger.mode == "count":
        keep = np.cumsum(in_window) <= trigger.sample_count
        in_window &= keep
        if int(in_window.sum()) < trigger.sample_count:
            status = "unterminated"
    ts, current, bus_v, flags = (a[in_window] for a in (ts, current, bus_v, flags))

    modes = [PowerSaveMode(idx, amps, volts)
             for idx, amps, volts in profile.power_save_modes]
    events = [PowerModeEvent("enter", m, s) for s, e, m in intervals]
    events += [PowerModeEvent("exit", m, e) for s, e, m in intervals]
    events.sort(key=lambda ev: ev.timestamp_ns)

    trace = Trace(ts, bus_v, current, flags, events=events,
                  trigger_edges=list(trigger.edges), config=config,
                  driver_name=driver.name, bus_speed_khz=options.speed_khz)

    flush_log = ""
    overruns = 0
    if trace_fh is not None:
        header = TraceHeader.from_config(config, driver.name, options.speed_khz)
        policy = options.buffering or BufferPolicy("two_buffer", 4096)
        writer = make_writer(policy, trace_fh, header, options.write_speed_bps)
        for record, t in zip(trace_to_records(trace), ts):
            writer.push(record, int(t))
        writer.close()
        overruns = writer.overruns
        flush_log = writer.format_flush_log()

    e_gated = gated_energy(trace)
    e_naive = naive_energy(trace)
    e_hybrid = hybrid_energy(trace, modes) if modes else None
    e_device = e_hybrid if e_hybrid is not None else e_gated

    window_lo = max(start_ns, 0) * 1e-9
    window_hi = limit_ns * 1e-9
    e_ref = exact_energy(profile, (window_lo, window_hi))
    error = abs(e_device - e_ref) / e_ref * 100.0 if e_ref > 0 else 0.0

    report = ExperimentReport(
        e_device_j=e_device, e_reference_j=e_ref, error_percent=error,
        sample_count=len(trace), overrun_count=overruns, status=status,
        config={
            "resolution_bits": config.resolution_bits,
            "pga_divider": config.pga_divider,
            "driver": driver.name,
            "speed_khz": options.speed_khz,
            "supply_voltage": config.supply_voltage,
            "board": board.name,
            "seed": options.seed,
            "calibrated": calibration is not None,
        })
    return PipelineResult(trace=trace, report=report, energy_gated_j=e_gated,
                          energy_naive_j=e_naive, energy_hybrid_j=e_hybrid,
                          modes=modes, flush_log=flush_log)


def run_experiment(preset: str, workload: int, options: PipelineOptions,
                   trigger: Optional[TriggerSpec] = None,
                   calibration: Optional[CalibrationCurve] = None,
                   source: str = "supply", duration: float = 30.0,
                   trace_fh=None) -> PipelineResult:
    """Generate a preset profile and measure it; 30s runs by default."""
    trigger = trigger or TriggerSpec.duration(duration)
    profile = generate_profile(preset, workload, seed=options.seed,
                               duration=duration, source=source)
    return run_pipeline(profile, options, trigger, calibration=calibration,
                        trace_fh=trace_fh)


def device_pipeline(options: PipelineOptions):
    """A ``profile -> Trace`` callable for calibration sweeps."""

    def run(profile: LoadProfile) -> Trace:
        trigger = TriggerSpec.duration(profile.duration)
        return run_pipeline(profile, options, trigger).trace

    return run
