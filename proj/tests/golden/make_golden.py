#!/usr/bin/env python3
"""Generate golden DNP3 byte vectors for the codec tests.

Implements CRC-16/DNP and the frame layout directly from the published
parameter catalogue and field tables, independent of the C++ code under
test: the CRC here reflects each input byte and runs an MSB-first shift
register with polynomial 0x3D65, then reflects and complements the result
(the C++ side is a reflected table walk).  Run from the repo root:

    python3 tests/golden/make_golden.py > tests/golden/dnp3_golden.json
"""

import json
import struct
import sys

POLY = 0x3D65


def reflect(value: int, width: int) -> int:
    out = 0
    for i in range(width):
        if value & (1 << i):
            out |= 1 << (width - 1 - i)
    return out


def crc16_dnp(data: bytes) -> int:
    crc = 0x0000
    for byte in data:
        cur = reflect(byte, 8)
        for bit in range(7, -1, -1):
            top = (crc >> 15) & 1
            crc = (crc << 1) & 0xFFFF
            if top ^ ((cur >> bit) & 1):
                crc ^= POLY
    return reflect(crc, 16) ^ 0xFFFF


assert crc16_dnp(b"123456789") == 0xEA82, hex(crc16_dnp(b"123456789"))


def crc_le(data: bytes) -> bytes:
    return struct.pack("<H", crc16_dnp(data))


def link_frame(control: int, dest: int, src: int, user: bytes) -> bytes:
    assert len(user) <= 250
    header = bytes([0x05, 0x64, 5 + len(user), control]) + struct.pack("<HH", dest, src)
    out = header + crc_le(header)
    for off in range(0, len(user), 16):
        block = user[off:off + 16]
        out += block + crc_le(block)
    return out


CTRL_MASTER = 0x80 | 0x40 | 0x04  # DIR | PRM | unconfirmed user data
CTRL_OUTSTATION = 0x40 | 0x04


def frames_for(app: bytes, src: int, dest: int, from_master: bool, tseq: int = 0):
    control = CTRL_MASTER if from_master else CTRL_OUTSTATION
    chunks = [app[i:i + 249] for i in range(0, len(app), 249)] or [b""]
    frames = []
    for i, chunk in enumerate(chunks):
        th = tseq & 0x3F
        if i == 0:
            th |= 0x40  # FIR
        if i == len(chunks) - 1:
            th |= 0x80  # FIN
        frames.append(link_frame(control, dest, src, bytes([th]) + chunk))
        tseq = (tseq + 1) & 0x3F
    return frames


def app_read(seq: int) -> bytes:
    # g30 v0, qualifier 0x06 (all objects, no range field)
    return bytes([0x80 | 0x40 | (seq & 0x0F), 0x01, 30, 0, 0x06])


def app_response_analogs(seq: int, points, iin: int = 0) -> bytes:
    # g30 v5, qualifier 0x00: start, stop, then per point flag + float32 LE
    start, stop = points[0][0], points[-1][0]
    body = bytes([0x80 | 0x40 | (seq & 0x0F), 0x81]) + struct.pack("<H", iin)
    body += bytes([30, 5, 0x00, start, stop])
    for _, value, flag in points:
        body += bytes([flag]) + struct.pack("<f", value)
    return body


def app_direct_operate(seq: int, points) -> bytes:
    # g41 v3, qualifier 0x17: count, then per point index + float32 + status
    body = bytes([0x80 | 0x40 | (seq & 0x0F), 0x05, 41, 3, 0x17, len(points)])
    for index, value, status in points:
        body += bytes([index]) + struct.pack("<f", value) + bytes([status])
    return body


def app_operate_response(seq: int, points, iin: int = 0) -> bytes:
    body = bytes([0x80 | 0x40 | (seq & 0x0F), 0x81]) + struct.pack("<H", iin)
    body += bytes([41, 3, 0x17, len(points)])
    for index, value, status in points:
        body += bytes([index]) + struct.pack("<f", value) + bytes([status])
    return body


def app_confirm(seq: int) -> bytes:
    return bytes([0x80 | 0x40 | (seq & 0x0F), 0x00])


def hexs(b: bytes) -> str:
    return b.hex()


def main():
    vectors = {}

    vectors["crc"] = [
        {"input": hexs(b"123456789"), "crc": crc16_dnp(b"123456789")},
        {"input": "", "crc": crc16_dnp(b"")},
        {"input": "00", "crc": crc16_dnp(b"\x00")},
        {"input": "0564054480003c01", "crc": crc16_dnp(bytes.fromhex("0564054480003c01"))},
        {"input": "ff" * 16, "crc": crc16_dnp(b"\xff" * 16)},
        {"input": hexs(bytes(range(32))), "crc": crc16_dnp(bytes(range(32)))},
    ]

    # Master 1 polls outstation 108 (bus 8 host).
    read = app_read(3)
    vectors["read_request"] = {
        "seq": 3, "src": 1, "dest": 108,
        "fragment": hexs(read),
        "frames": [hexs(f) for f in frames_for(read, 1, 108, True)],
    }

    # Three-point meter response: v (pu), p (kW), q (kVAr).
    meter_pts = [(0, 1.0234375, 1), (1, 230.0, 1), (2, 142.5, 1)]
    resp = app_response_analogs(3, meter_pts)
    vectors["meter_response"] = {
        "seq": 3, "src": 108, "dest": 1,
        "points": [{"index": i, "value": v, "flag": f} for i, v, f in meter_pts],
        "fragment": hexs(resp),
        "frames": [hexs(f) for f in frames_for(resp, 108, 1, False)],
        "value_offsets": [10, 15, 20],
    }

    # Tap command: AO 0 := 3.0 on a regulator host.
    op_pts = [(0, 3.0, 0)]
    operate = app_direct_operate(5, op_pts)
    vectors["direct_operate"] = {
        "seq": 5, "src": 1, "dest": 108,
        "points": [{"index": i, "value": v, "status": s} for i, v, s in op_pts],
        "fragment": hexs(operate),
        "frames": [hexs(f) for f in frames_for(operate, 1, 108, True)],
        "value_offsets": [7],
    }

    op_resp = app_operate_response(5, op_pts)
    vectors["operate_response"] = {
        "seq": 5, "src": 108, "dest": 1,
        "fragment": hexs(op_resp),
        "frames": [hexs(f) for f in frames_for(op_resp, 108, 1, False)],
    }

    # Four-point Volt/VAR curve write: [v_center, halfwidth, q_max_frac, slope].
    curve_pts = [(0, 1.0, 0), (1, 0.035, 0), (2, 0.6, 0), (3, 40.0, 0)]
    curve = app_direct_operate(9, curve_pts)
    vectors["curve_operate"] = {
        "seq": 9, "src": 1, "dest": 134,
        "fragment": hexs(curve),
        "frames": [hexs(f) for f in frames_for(curve, 1, 134, True)],
        "value_offsets": [7, 13, 19, 25],
    }

    # Sixty-point response: fragment is 309 bytes, forcing two link frames.
    wide_pts = [(i, float(i) * 0.5 + 0.25, 1) for i in range(60)]
    wide = app_response_analogs(12, wide_pts)
    wide_frames = frames_for(wide, 134, 1, False)
    assert len(wide_frames) == 2
    assert all(len(f) <= 292 for f in wide_frames)
    vectors["multi_frame_response"] = {
        "seq": 12, "src": 134, "dest": 1,
        "point_count": len(wide_pts),
        "fragment": hexs(wide),
        "frames": [hexs(f) for f in wide_frames],
    }

    confirm = app_confirm(3)
    vectors["confirm"] = {
        "seq": 3, "src": 1, "dest": 108,
        "fragment": hexs(confirm),
        "frames": [hexs(f) for f in frames_for(confirm, 1, 108, True)],
    }

    # A frame whose 17th user byte straddles block one and two.
    pts17 = [(i, 1.5 * i, 1) for i in range(4)]
    frag17 = app_response_analogs(1, pts17)
    vectors["two_block_frame"] = {
        "fragment": hexs(frag17),
        "frames": [hexs(f) for f in frames_for(frag17, 110, 1, False)],
    }

    json.dump(vectors, sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
