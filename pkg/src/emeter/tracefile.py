"""Bit-exact binary trace format.

Every sample entry is 16 bytes, little-endian:

    offset 0   u64  timestamp, nanoseconds since measurement start
    offset 8   i32  bus voltage, microvolts
    offset 12  i32  current, microamperes

Integer micro-units are lossless up to about 2.1kV / 2.1kA, far beyond the
device range.  Records are preceded by one fixed 64-byte header:

    offset 0   4s   magic 'EMP1'
    offset 4   u16  format version (currently 1)
    offset 6   u8   resolution bits
    offset 7   u8   PGA divider
    offset 8   u8   bus range, volts
    offset 9   u8   supply voltage * 10
    offset 10  u32  shunt resistance, microohms
    offset 14  8s   driver profile name, NUL padded
    offset 22  u32  bus speed, kHz
    offset 26  u64  start wall clock, nanoseconds
    offset 34  30x  reserved (zero)

A dropped-buffer gap is recorded in-line as a gap marker: a record whose
voltage and current fields both hold INT32_MIN.  Decoders must surface gaps
rather than treat them as readings.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable

import numpy as np

from emeter.sampler import Sample, Trace
from emeter.sensor import SensorConfig

MAGIC = b"EMP1"
FORMAT_VERSION = 1
HEADER_SIZE = 64
RECORD_SIZE = 16
GAP_SENTINEL = -(2 ** 31)

_HEADER = struct.Struct("<4sHBBBBI8sIQ30x")
_RECORD = struct.Struct("<Qii")

assert _HEADER.size == HEADER_SIZE
assert _RECORD.size == RECORD_SIZE


@dataclass(frozen=True)
class TraceRecord:
    """One decoded 16-byte entry."""

    timestamp_ns: int
    bus_uv: int
    current_ua: int

    @property
    def is_gap(self) -> bool:
        return self.bus_uv == GAP_SENTINEL and self.current_ua == GAP_SENTINEL

    @classmethod
    def gap(cls, timestamp_ns: int) -> "TraceRecord":
        return cls(timestamp_ns, GAP_SENTINEL, GAP_SENTINEL)

    @classmethod
    def from_sample(cls, sample: Sample) -> "TraceRecord":
        return cls(sample.timestamp_ns,
                   int(round(sample.bus_voltage * 1e6)),
                   int(round(sample.current * 1e6)))

    def to_sample(self) -> Sample:
        if self.is_gap:
            raise ValueError("gap marker is not a reading")
        return Sample(self.timestamp_ns, self.bus_uv * 1e-6,
                      self.current_ua * 1e-6)


def encode_record(record: TraceRecord) -> bytes:
    return _RECORD.pack(record.timestamp_ns, record.bus_uv, record.current_ua)


def decode_record(buf: bytes) -> TraceRecord:
    if len(buf) != RECORD_SIZE:
        raise ValueError(f"record must be exactly {RECORD_SIZE} bytes")
    ts, bus_uv, cur_ua = _RECORD.unpack(buf)
    return TraceRecord(ts, bus_uv, cur_ua)


@dataclass(frozen=True)
class TraceHeader:
    resolution_bits: int = 12
    pga_divider: int = 1
    bus_range: int = 16
    supply_voltage: float = 5.0
    shunt_uohm: int = 100_000
    driver_name: str = "bcm"
    bus_speed_khz: int = 2500
    start_clock_ns: int = 0

    @classmethod
    def from_config(cls, config: SensorConfig, driver_name: str,
                    bus_speed_khz: int, start_clock_ns: int = 0) -> "TraceHeader":
        return cls(resolution_bits=config.resolution_bits,
                   pga_divider=config.pga_divider,
                   bus_range=int(config.bus_range),
                   supply_voltage=config.supply_voltage,
                   shunt_uohm=int(round(config.shunt_resistance * 1e6)),
                   driver_name=driver_name, bus_speed_khz=bus_speed_khz,
                   start_clock_ns=start_clock_ns)

    def to_config(self) -> SensorConfig:
        return SensorConfig(shunt_resistance=self.shunt_uohm / 1e6,
                            pga_divider=self.pga_divider,
                            resolution_bits=self.resolution_bits,
                            bus_range=float(self.bus_range),
                            supply_voltage=self.supply_voltage)


def encode_header(header: TraceHeader) -> bytes:
    return _HEADER.pack(MAGIC, FORMAT_VERSION, header.resolution_bits,
                        header.pga_divider, header.bus_range,
                        int(round(header.supply_voltage * 10)),
                        header.shunt_uohm,
                        header.driver_name.encode()[:8],
                        header.bus_speed_khz, header.start_clock_ns)


def decode_header(buf: bytes) -> TraceHeader:
    if len(buf) != HEADER_SIZE:
        raise ValueError(f"header must be exactly {HEADER_SIZE} bytes")
    (magic, version, res, pga, bus_range, supply10, shunt_uohm, driver,
     speed, start_clock) = _HEADER.unpack(buf)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    return TraceHeader(resolution_bits=res, pga_divider=pga,
                       bus_range=bus_range, supply_voltage=supply10 / 10.0,
                       shunt_uohm=shunt_uohm,
                       driver_name=driver.rstrip(b"\x00").decode(),
                       bus_speed_khz=speed, start_clock_ns=start_clock)


# --------------------------------------------------------------------------
# Whole-file encode / decode
# --------------------------------------------------------------------------

def write_trace_file(fh: BinaryIO, header: TraceHeader,
                     records: Iterable[TraceRecord]) -> int:
    """Write header plus records; returns the number of records written."""
    fh.write(encode_header(header))
    n = 0
    for record in records:
        fh.write(encode_record(record))
        n += 1
    return n


def read_trace_file(fh: BinaryIO) -> tuple[TraceHeader, list[TraceRecord]]:
    header = decode_header(fh.read(HEADER_SIZE))
    records = []
    while True:
        buf = fh.read(RECORD_SIZE)
        if not buf:
            break
        records.append(decode_record(buf))
    return header, records


def encode_trace(header: TraceHeader, records: Iterable[TraceRecord]) -> bytes:
    out = io.BytesIO()
    write_trace_file(out, header, records)
    return out.getvalue()


def decode_trace(data: bytes) -> tuple[TraceHeader, list[TraceRecord]]:
    return read_trace_file(io.BytesIO(data))


def trace_to_records(trace: Trace) -> list[TraceRecord]:
    bus_uv = np.round(trace.bus_voltage * 1e6).astype(np.int64)
    cur_ua = np.round(trace.current * 1e6).astype(np.int64)
    return [TraceRecord(int(t), int(v), int(i))
            for t, v, i in zip(trace.timestamps_ns, bus_uv, cur_ua)]


def records_to_trace(header: TraceHeader,
                     records: Iterable[TraceRecord]) -> Trace:
    """Build an in-memory trace from decoded records (gaps skipped)."""
    readings = [r for r in records if not r.is_gap]
    return Trace([r.timestamp_ns for r in readings],
                 [r.bus_uv * 1e-6 for r in readings],
                 [r.current_ua * 1e-6 for r in readings],
                 [0] * len(readings),
                 config=header.to_config(), driver_name=header.driver_name,
                 bus_speed_khz=header.bus_speed_khz,
                 start_clock_ns=header.start_clock_ns)


def load_trace(path: str) -> Trace:
    with open(path, "rb") as fh:
        header, records = read_trace_file(fh)
    return records_to_trace(header, records)


def export_csv(fh, header: TraceHeader, records: Iterable[TraceRecord]) -> int:
    """Write ``timestamp_ns,bus_mV,current_mA`` rows; returns the row count."""
    fh.write("timestamp_ns,bus_mV,current_mA\n")
    n = 0
    for r in records:
        if r.is_gap:
            continue
        fh.write(f"{r.timestamp_ns},{r.bus_uv / 1000.0:.3f},{r.current_ua / 1000.0:.3f}\n")
        n += 1
    return n
