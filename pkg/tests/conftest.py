import struct
import sys
import zlib
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pathinsight.resources import export_toy  # noqa: E402


def make_png(seed: int = 0, size: int = 4) -> bytes:
    """Tiny valid grayscale PNG whose pixels depend on ``seed``."""

    def chunk(kind: bytes, data: bytes) -> bytes:
        body = kind + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    rows = b"".join(b"\x00" + bytes((seed + x + y) % 256 for x in range(size)) for y in range(size))
    ihdr = struct.pack(">IIBBBBB", size, size, 8, 0, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(rows)) + chunk(b"IEND", b"")


@pytest.fixture
def toy_dir(tmp_path: Path) -> Path:
    dest = tmp_path / "toy"
    export_toy(dest)
    return dest


@pytest.fixture
def png() -> bytes:
    return make_png()


# acceptance reporting: one PASS/FAIL/SKIP line per criterion in the summary
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {status}  {detail}")
