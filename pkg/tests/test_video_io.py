import struct
from pathlib import Path

import numpy as np
import pytest

from spadvid.rng import make_rng
from spadvid.sensor import BinarySequence, sample_binary_frame
from spadvid.video_io import (
    BadMagicError,
    BadVersionError,
    FormatError,
    TruncatedError,
    packed_file_size,
    read_frames,
    read_packed_binary,
    write_frames,
    write_packed_binary,
)

GOLDEN = Path(__file__).parent / "golden"


def random_binary(t, h, w, seed=0, frame_period=1 / 156_000):
    rng = make_rng(seed)
    frames = np.stack([sample_binary_frame(np.full((h, w), 0.5), rng) for _ in range(t)])
    return BinarySequence(frames=frames, frame_period=frame_period)


class TestPackedBinary:
    def test_round_trip_sensor_sized(self, tmp_path):
        seq = random_binary(100, 128, 512, seed=1)
        p = tmp_path / "seq.spb"
        write_packed_binary(p, seq)
        back = read_packed_binary(p)
        assert np.array_equal(back.frames, seq.frames)
        assert back.frame_period == seq.frame_period

    def test_byte_layout_by_hand(self, tmp_path):
        # one 2x12 frame: rows pad to 2 bytes, MSB = leftmost pixel
        frames = np.zeros((1, 2, 12), dtype=np.uint8)
        frames[0, 0, 0] = 1      # first byte 0b10000000
        frames[0, 0, 11] = 1     # second byte 0b00010000 (low 4 bits padding)
        frames[0, 1, 4] = 1      # third byte 0b00001000
        seq = BinarySequence(frames=frames, frame_period=0.25)
        p = tmp_path / "tiny.spb"
        write_packed_binary(p, seq)
        expected = struct.pack("<4sHIIId", b"SPB1", 1, 2, 12, 1, 0.25)
        expected += bytes([0b10000000, 0b00010000, 0b00001000, 0b00000000])
        assert p.read_bytes() == expected

    def test_width_12_padding_rule(self, tmp_path):
        seq = random_binary(3, 4, 12, seed=2)
        p = tmp_path / "w12.spb"
        write_packed_binary(p, seq)
        data = p.read_bytes()[struct.calcsize("<4sHIIId") :]
        rows = np.frombuffer(data, dtype=np.uint8).reshape(3, 4, 2)
        assert (rows[:, :, 1] & 0x0F).max() == 0   # low 4 bits of each row's 2nd byte

    def test_file_size_formula(self, tmp_path):
        for t, h, w in ((1, 2, 12), (5, 7, 8), (4, 3, 17)):
            seq = random_binary(t, h, w, seed=3)
            p = tmp_path / f"{t}x{h}x{w}.spb"
            write_packed_binary(p, seq)
            assert p.stat().st_size == packed_file_size(t, h, w)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.spb"
        write_packed_binary(p, random_binary(1, 2, 2))
        data = bytearray(p.read_bytes())
        data[:4] = b"NOPE"
        p.write_bytes(bytes(data))
        with pytest.raises(BadMagicError):
            read_packed_binary(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "bad.spb"
        write_packed_binary(p, random_binary(1, 2, 2))
        data = bytearray(p.read_bytes())
        data[4:6] = (9).to_bytes(2, "little")
        p.write_bytes(bytes(data))
        with pytest.raises(BadVersionError):
            read_packed_binary(p)

    def test_truncation(self, tmp_path):
        p = tmp_path / "bad.spb"
        write_packed_binary(p, random_binary(4, 6, 10))
        data = p.read_bytes()
        p.write_bytes(data[:-3])
        with pytest.raises(TruncatedError):
            read_packed_binary(p)

    def test_golden_file(self, tmp_path):
        golden = GOLDEN / "golden_2x3x12.spb"
        seq = read_packed_binary(golden)
        assert seq.frames.shape == (2, 3, 12)
        assert seq.frame_period == pytest.approx(1 / 156_000)
        rewritten = tmp_path / "rewrite.spb"
        write_packed_binary(rewritten, seq)
        assert rewritten.read_bytes() == golden.read_bytes()


class TestFrameDirectories:
    def test_16_bit_round_trip_of_quarter_levels(self, tmp_path):
        frames = np.stack([np.arange(16).reshape(4, 4) / 15.0 for _ in range(3)])
        write_frames(tmp_path / "d", frames, depth=16)
        back, depth = read_frames(tmp_path / "d")
        assert depth == 16
        assert np.abs(back - frames).max() <= 1.0 / (2 * 65535)

    def test_8_bit_write_of_4_bit_data_lossless(self, tmp_path):
        # every k/15 maps to code 17k, exactly recoverable from 8 bits
        frames = (np.arange(16) / 15.0).reshape(1, 4, 4)
        write_frames(tmp_path / "d", frames, depth=8)
        back, depth = read_frames(tmp_path / "d")
        assert depth == 8
        np.testing.assert_array_equal(back, frames)

    def test_filename_ordering(self, tmp_path):
        frames = np.linspace(0, 1, 12)[:, None, None] * np.ones((12, 3, 3))
        write_frames(tmp_path / "d", frames, depth=16)
        names = sorted(p.name for p in (tmp_path / "d").glob("*.png"))
        assert names[9] == "frame_00009.png"
        assert names[10] == "frame_00010.png"
        back, _ = read_frames(tmp_path / "d")
        np.testing.assert_allclose(back.mean(axis=(1, 2)), frames.mean(axis=(1, 2)), atol=1e-4)

    def test_inconsistent_sizes_rejected(self, tmp_path):
        d = tmp_path / "d"
        write_frames(d, np.zeros((2, 4, 4)), depth=8)
        write_frames(tmp_path / "other", np.zeros((1, 5, 5)), depth=8)
        (tmp_path / "other" / "frame_00000.png").rename(d / "frame_00099.png")
        with pytest.raises(FormatError, match="size"):
            read_frames(d)

    def test_empty_directory(self, tmp_path):
        (tmp_path / "d").mkdir()
        with pytest.raises(FormatError, match="no .png"):
            read_frames(tmp_path / "d")

    def test_out_of_range_values_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_frames(tmp_path / "d", np.full((1, 2, 2), 1.5))

    def test_golden_frames(self):
        back, depth = read_frames(GOLDEN / "golden_frames")
        assert depth == 16
        assert back.shape == (2, 4, 5)
        expected = np.stack(
            [
                np.linspace(0, 1, 20).reshape(4, 5),
                np.linspace(1, 0, 20).reshape(4, 5),
            ]
        )
        quantized = np.round(expected * 65535) / 65535
        np.testing.assert_allclose(back, quantized, atol=1e-12)
