# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled packet kernels; behavioral twin of `_pure.py`.

Keep the two modules in lockstep: the fallback is selected at import when
this extension is absent, and the differential tests assert equality.
"""

from cpython.bytes cimport PyBytes_FromStringAndSize
from libc.string cimport memcpy


cdef unsigned long _sum_words(const unsigned char *buf, Py_ssize_t n):
    cdef unsigned long total = 0
    cdef Py_ssize_t i = 0
    while i + 1 < n:
        total += (<unsigned long> buf[i] << 8) | buf[i + 1]
        i += 2
    if i < n:  # odd length: pad with a zero byte
        total += <unsigned long> buf[i] << 8
    return total


cdef unsigned int _fold(unsigned long total):
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return <unsigned int> (~total & 0xFFFF)


cdef unsigned long _sum_pseudo(unsigned long src, unsigned long dst,
                               unsigned int udp_len):
    return ((src >> 16) + (src & 0xFFFF) + (dst >> 16) + (dst & 0xFFFF)
            + 17 + udp_len)


def checksum16(bytes data):
    """RFC 1071 one's-complement checksum, network byte order."""
    return _fold(_sum_words(data, len(data)))


def ipv4_udp_datagram(unsigned long src, unsigned long dst,
                      unsigned int sport, unsigned int dport,
                      bytes payload, unsigned int ident=0,
                      unsigned int ttl=64):
    """A complete IPv4+UDP datagram with both checksums filled in.

    The UDP checksum is always computed (it is optional in IPv4) and a
    computed zero is transmitted as 0xFFFF per the UDP rules.
    """
    cdef Py_ssize_t plen = len(payload)
    cdef unsigned int udp_len = 8 + <unsigned int> plen
    cdef unsigned int total_len = 20 + udp_len
    cdef bytes out = PyBytes_FromStringAndSize(NULL, total_len)
    cdef unsigned char *buf = <unsigned char *> out
    cdef const unsigned char *pl = payload
    cdef unsigned long total
    cdef unsigned int csum

    buf[0] = 0x45
    buf[1] = 0
    buf[2] = (total_len >> 8) & 0xFF
    buf[3] = total_len & 0xFF
    buf[4] = (ident >> 8) & 0xFF
    buf[5] = ident & 0xFF
    buf[6] = 0
    buf[7] = 0
    buf[8] = <unsigned char> (ttl & 0xFF)
    buf[9] = 17
    buf[10] = 0
    buf[11] = 0
    buf[12] = (src >> 24) & 0xFF
    buf[13] = (src >> 16) & 0xFF
    buf[14] = (src >> 8) & 0xFF
    buf[15] = src & 0xFF
    buf[16] = (dst >> 24) & 0xFF
    buf[17] = (dst >> 16) & 0xFF
    buf[18] = (dst >> 8) & 0xFF
    buf[19] = dst & 0xFF
    csum = _fold(_sum_words(buf, 20))
    buf[10] = (csum >> 8) & 0xFF
    buf[11] = csum & 0xFF

    buf[20] = (sport >> 8) & 0xFF
    buf[21] = sport & 0xFF
    buf[22] = (dport >> 8) & 0xFF
    buf[23] = dport & 0xFF
    buf[24] = (udp_len >> 8) & 0xFF
    buf[25] = udp_len & 0xFF
    buf[26] = 0
    buf[27] = 0
    if plen:
        memcpy(buf + 28, pl, plen)
    total = _sum_pseudo(src, dst, udp_len) + _sum_words(buf + 20, udp_len)
    csum = _fold(total)
    if csum == 0:
        csum = 0xFFFF
    buf[26] = (csum >> 8) & 0xFF
    buf[27] = csum & 0xFF
    return out


def parse_ipv4_udp(bytes data):
    """(src, dst, sport, dport, payload) or None for anything not a valid
    IPv4/UDP datagram. Trailing bytes beyond the IP total length are ignored;
    a nonzero UDP checksum is verified, a zero one is accepted as unused."""
    cdef Py_ssize_t n = len(data)
    if n < 28:
        return None
    cdef const unsigned char *buf = data
    if buf[0] >> 4 != 4:
        return None
    cdef unsigned int ihl = (buf[0] & 0x0F) * 4
    if ihl < 20 or n < <Py_ssize_t> (ihl + 8):
        return None
    cdef unsigned int total_len = (buf[2] << 8) | buf[3]
    if total_len < ihl + 8 or total_len > n:
        return None
    if _fold(_sum_words(buf, ihl)) != 0:
        return None
    if buf[9] != 17:
        return None
    if (((buf[6] << 8) | buf[7]) & 0x3FFF) != 0:
        return None
    cdef unsigned long src = ((<unsigned long> buf[12] << 24)
                              | (<unsigned long> buf[13] << 16)
                              | (buf[14] << 8) | buf[15])
    cdef unsigned long dst = ((<unsigned long> buf[16] << 24)
                              | (<unsigned long> buf[17] << 16)
                              | (buf[18] << 8) | buf[19])
    cdef unsigned int sport = (buf[ihl] << 8) | buf[ihl + 1]
    cdef unsigned int dport = (buf[ihl + 2] << 8) | buf[ihl + 3]
    cdef unsigned int udp_len = (buf[ihl + 4] << 8) | buf[ihl + 5]
    if udp_len < 8 or ihl + udp_len > total_len:
        return None
    cdef unsigned int udp_sum = (buf[ihl + 6] << 8) | buf[ihl + 7]
    if udp_sum != 0:
        if _fold(_sum_pseudo(src, dst, udp_len)
                 + _sum_words(buf + ihl, udp_len)) != 0:
            return None
    return (src, dst, sport, dport,
            PyBytes_FromStringAndSize(<const char *> (buf + ihl + 8),
                                      udp_len - 8))
