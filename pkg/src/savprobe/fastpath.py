"""Backend selector for the packet kernels.

Prefers the compiled extension, falls back to the pure-Python twin when it
is not built. Set SAVPROBE_PURE=1 to force the fallback (the benchmark and
the differential tests import both modules explicitly).
"""

import os

if os.environ.get("SAVPROBE_PURE"):
    from savprobe import _pure as _impl

    BACKEND = "pure"
else:
    try:
        from savprobe import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        from savprobe import _pure as _impl  # type: ignore[no-redef]

        BACKEND = "pure"

checksum16 = _impl.checksum16
ipv4_udp_datagram = _impl.ipv4_udp_datagram
parse_ipv4_udp = _impl.parse_ipv4_udp
