"""Deterministic stand-in adapter speaking the wire protocol over stdio.

Mirrors `mock_logits` and `serve` in mod.rs so either transport decodes the
other's archives.
"""
import hashlib
import struct
import sys

VOCAB = 128
GRID = 3
MAGIC = b"HNLP"


def identity():
    params = b"mock-adapter/v1" + bytes([GRID]) + struct.pack("<I", VOCAB)
    return bytes([4]) + hashlib.sha256(params).digest() + struct.pack("<I", VOCAB)


def logits(ctx):
    a = ctx[-1] if ctx else 32
    b = ctx[-2] if len(ctx) >= 2 else 32
    out = []
    for i in range(VOCAB):
        v = ((i * 7 + a * 13 + b * 5) % 23) * 150 - 2000
        if i == (a + 1) % 128 or i == b:
            v += 2500
        if 97 <= i <= 122 or i == 32:
            v += 1500
        out.append(v)
    return out


def read_exact(f, n):
    buf = b""
    while len(buf) < n:
        chunk = f.read(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def send(f, kind, body):
    f.write(struct.pack("<IB", len(body) + 1, kind) + body)
    f.flush()


def u32s(body, off):
    (n,) = struct.unpack_from("<I", body, off)
    return list(struct.unpack_from("<%dI" % n, body, off + 4))


def main():
    rd, wr = sys.stdin.buffer, sys.stdout.buffer
    while True:
        head = read_exact(rd, 4)
        if head is None:
            return
        (n,) = struct.unpack("<I", head)
        frame = read_exact(rd, n)
        kind, body = frame[0], frame[1:]
        if kind == 0:
            grid_k = body[4 + 2 + 37]
            if grid_k != GRID:
                send(wr, 3, struct.pack("<H", 1) + b"grid_k mismatch")
                return
            send(wr, 0, MAGIC + struct.pack("<H", 1) + identity() + bytes([GRID]) + struct.pack("<I", VOCAB))
        elif kind == 1:
            (rid,) = struct.unpack_from("<I", body)
            ctx = u32s(body, 4)
            send(wr, 2, struct.pack("<I", rid) + struct.pack("<%di" % VOCAB, *logits(ctx)))
        elif kind == 4:
            (rid,) = struct.unpack_from("<I", body)
            data = body[4:]
            if all(b < 0x80 for b in data):
                send(wr, 5, struct.pack("<IBI", rid, 1, len(data)) + struct.pack("<%dI" % len(data), *data))
            else:
                send(wr, 5, struct.pack("<IBI", rid, 0, 0))
        elif kind == 6:
            (rid,) = struct.unpack_from("<I", body)
            send(wr, 7, struct.pack("<I", rid) + bytes(u32s(body, 4)))
        else:
            send(wr, 3, struct.pack("<H", 4) + b"unsupported")


if __name__ == "__main__":
    main()
