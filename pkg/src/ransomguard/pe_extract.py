"""Minimal PE32/PE32+ parser and static feature extraction.

Only the pieces needed for header, section and resource features are parsed.
All integers are little-endian. Features are named after the columns of the
public PE-header dataset (note its irregular spellings, e.g.
``SectionMaxRawsize`` next to ``SectionsMeanRawsize``).
"""
from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass

PE32_MAGIC = 0x10B
PE32_PLUS_MAGIC = 0x20B
RESOURCE_DIRECTORY = 2
MAX_RESOURCE_DEPTH = 3
MAX_RESOURCE_LEAVES = 4096

_COFF = struct.Struct("<HHIIIHH")
_OPT32 = struct.Struct("<HBBIIIIIIIIIHHHHHHIIIIHHIIIIII")
_OPT64 = struct.Struct("<HBBIIIIIQIIHHHHHHIIIIHHQQQQII")
_SECTION = struct.Struct("<8sIIIIIIHHI")
_RES_DIR = struct.Struct("<IIHHHH")
_RES_ENTRY = struct.Struct("<II")
_RES_DATA = struct.Struct("<IIII")

_OPT_FIELDS = (
    "magic", "major_linker_version", "minor_linker_version", "size_of_code",
    "size_of_initialized_data", "size_of_uninitialized_data",
    "address_of_entry_point", "base_of_code",
)
_OPT_TAIL = (
    "section_alignment", "file_alignment", "major_operating_system_version",
    "minor_operating_system_version", "major_image_version", "minor_image_version",
    "major_subsystem_version", "minor_subsystem_version", "win32_version_value",
    "size_of_image", "size_of_headers", "checksum", "subsystem",
    "dll_characteristics", "size_of_stack_reserve", "size_of_stack_commit",
    "size_of_heap_reserve", "size_of_heap_commit", "loader_flags",
    "number_of_rva_and_sizes",
)


class PEParseError(ValueError):
    """Structural error in a PE image, tagged with the byte offset at fault."""

    def __init__(self, offset: int, reason: str):
        super().__init__(f"{reason} (offset {offset:#x})")
        self.offset = offset
        self.reason = reason


@dataclass(frozen=True)
class DosHeader:
    e_magic: bytes
    e_lfanew: int


@dataclass(frozen=True)
class CoffHeader:
    machine: int
    number_of_sections: int
    time_date_stamp: int
    size_of_optional_header: int
    characteristics: int


@dataclass(frozen=True)
class OptionalHeader:
    magic: int
    major_linker_version: int
    minor_linker_version: int
    size_of_code: int
    size_of_initialized_data: int
    size_of_uninitialized_data: int
    address_of_entry_point: int
    base_of_code: int
    base_of_data: int
    image_base: int
    section_alignment: int
    file_alignment: int
    major_operating_system_version: int
    minor_operating_system_version: int
    major_image_version: int
    minor_image_version: int
    major_subsystem_version: int
    minor_subsystem_version: int
    win32_version_value: int
    size_of_image: int
    size_of_headers: int
    checksum: int
    subsystem: int
    dll_characteristics: int
    size_of_stack_reserve: int
    size_of_stack_commit: int
    size_of_heap_reserve: int
    size_of_heap_commit: int
    loader_flags: int
    number_of_rva_and_sizes: int
    data_directories: tuple[tuple[int, int], ...]

    @property
    def is_pe32_plus(self) -> bool:
        return self.magic == PE32_PLUS_MAGIC


@dataclass(frozen=True)
class Section:
    name: str
    virtual_size: int
    virtual_address: int
    raw_size: int
    raw_offset: int
    characteristics: int

    @property
    def raw_span(self) -> tuple[int, int]:
        return self.raw_offset, self.raw_offset + self.raw_size


@dataclass(frozen=True)
class ResourceLeaf:
    path: tuple[int, ...]
    rva: int
    size: int
    span: tuple[int, int]


@dataclass(frozen=True)
class PEMetadata:
    dos_header: DosHeader
    coff_header: CoffHeader
    optional_header: OptionalHeader
    sections: tuple[Section, ...]
    resources: tuple[ResourceLeaf, ...]
    data: bytes

    def section_bytes(self, section: Section) -> bytes:
        lo, hi = section.raw_span
        return self.data[lo:hi]

    def resource_bytes(self, leaf: ResourceLeaf) -> bytes:
        lo, hi = leaf.span
        return self.data[lo:hi]


def _unpack(fmt: struct.Struct, data: bytes, offset: int, what: str):
    if offset < 0 or offset + fmt.size > len(data):
        raise PEParseError(offset, f"truncated {what}")
    return fmt.unpack_from(data, offset)


def parse_pe(data: bytes) -> PEMetadata:
    """Parse and validate a PE image held in memory."""
    data = bytes(data)
    if not data:
        raise PEParseError(0, "empty input")
    if data[:2] != b"MZ":
        raise PEParseError(0, "bad MZ signature")
    if len(data) < 0x40:
        raise PEParseError(len(data), "truncated DOS header")
    (e_lfanew,) = struct.unpack_from("<I", data, 0x3C)
    if e_lfanew + 4 > len(data):
        raise PEParseError(0x3C, "e_lfanew points past end of file")
    if data[e_lfanew:e_lfanew + 4] != b"PE\0\0":
        raise PEParseError(e_lfanew, "bad PE signature")

    coff_off = e_lfanew + 4
    machine, nsec, stamp, _, _, opt_size, chars = _unpack(_COFF, data, coff_off, "COFF header")
    coff = CoffHeader(machine, nsec, stamp, opt_size, chars)

    opt_off = coff_off + _COFF.size
    if opt_off + 2 > len(data):
        raise PEParseError(opt_off, "truncated optional header")
    (magic,) = struct.unpack_from("<H", data, opt_off)
    if magic not in (PE32_MAGIC, PE32_PLUS_MAGIC):
        raise PEParseError(opt_off, f"unknown optional header magic {magic:#x}")
    fmt = _OPT32 if magic == PE32_MAGIC else _OPT64
    if opt_size < fmt.size:
        raise PEParseError(coff_off + 16, f"SizeOfOptionalHeader {opt_size} too small")
    fields = _unpack(fmt, data, opt_off, "optional header")
    head = dict(zip(_OPT_FIELDS, fields[:8]))
    if magic == PE32_MAGIC:
        base_of_data, image_base = fields[8], fields[9]
        tail = fields[10:]
    else:
        base_of_data, image_base = 0, fields[8]
        tail = fields[9:]
    tail = dict(zip(_OPT_TAIL, tail))

    dir_off = opt_off + fmt.size
    room = (opt_size - fmt.size) // 8
    n_dirs = min(tail["number_of_rva_and_sizes"], 16, room)
    if dir_off + 8 * n_dirs > len(data):
        raise PEParseError(dir_off, "truncated data directories")
    dirs = tuple(struct.unpack_from("<II", data, dir_off + 8 * i) for i in range(n_dirs))
    opt = OptionalHeader(base_of_data=base_of_data, image_base=image_base,
                         data_directories=dirs, **head, **tail)

    sec_off = opt_off + opt_size
    if sec_off + _SECTION.size * nsec > len(data):
        raise PEParseError(sec_off, "truncated section table")
    sections = []
    for i in range(nsec):
        off = sec_off + i * _SECTION.size
        name, vsize, va, rsize, roff, _, _, _, _, schars = _SECTION.unpack_from(data, off)
        if rsize and roff + rsize > len(data):
            raise PEParseError(
                off, f"section {i} raw span [{roff:#x}, {roff + rsize:#x}) "
                     f"exceeds file size {len(data):#x}")
        sections.append(Section(name.rstrip(b"\0").decode("latin-1"),
                                vsize, va, rsize, roff, schars))
    sections = tuple(sections)

    resources: tuple[ResourceLeaf, ...] = ()
    if n_dirs > RESOURCE_DIRECTORY and dirs[RESOURCE_DIRECTORY][0]:
        resources = _walk_resources(data, sections, dirs[RESOURCE_DIRECTORY][0])

    return PEMetadata(DosHeader(b"MZ", e_lfanew), coff, opt, sections, resources, data)


def rva_to_offset(sections, rva: int) -> int | None:
    for s in sections:
        extent = max(s.virtual_size, s.raw_size)
        if s.virtual_address <= rva < s.virtual_address + extent:
            delta = rva - s.virtual_address
            if delta < s.raw_size:
                return s.raw_offset + delta
            return None
    return None


def _walk_resources(data: bytes, sections, root_rva: int) -> tuple[ResourceLeaf, ...]:
    base = rva_to_offset(sections, root_rva)
    if base is None:
        return ()
    leaves: list[ResourceLeaf] = []
    visited: set[int] = set()

    def walk(rel: int, depth: int, path: tuple[int, ...]):
        off = base + rel
        if off in visited:
            raise PEParseError(off, "resource loop detected")
        visited.add(off)
        _, _, _, _, n_named, n_ids = _unpack(_RES_DIR, data, off, "resource directory")
        for i in range(n_named + n_ids):
            if len(leaves) >= MAX_RESOURCE_LEAVES:
                return
            entry_off = off + _RES_DIR.size + i * _RES_ENTRY.size
            name, target = _unpack(_RES_ENTRY, data, entry_off, "resource entry")
            if target & 0x80000000:
                if depth < MAX_RESOURCE_DEPTH:
                    walk(target & 0x7FFFFFFF, depth + 1, path + (name,))
                continue
            leaf_off = base + target
            rva, size, _, _ = _unpack(_RES_DATA, data, leaf_off, "resource data entry")
            start = rva_to_offset(sections, rva)
            if start is None:
                span = (0, 0)
            else:
                span = (start, min(start + size, len(data)))
            leaves.append(ResourceLeaf(path + (name,), rva, size, span))

    walk(0, 1, ())
    return tuple(leaves)


def shannon_entropy(data: bytes) -> float:
    """Shannon entropy of the byte histogram, in bits per byte."""
    n = len(data)
    if n == 0:
        return 0.0
    h = 0.0
    for count in Counter(data).values():
        p = count / n
        h -= p * math.log2(p)
    return h if h > 0.0 else 0.0


HEADER_FEATURES = (
    ("Machine", lambda m: m.coff_header.machine),
    ("SizeOfOptionalHeader", lambda m: m.coff_header.size_of_optional_header),
    ("Characteristics", lambda m: m.coff_header.characteristics),
    ("MajorLinkerVersion", lambda m: m.optional_header.major_linker_version),
    ("MinorLinkerVersion", lambda m: m.optional_header.minor_linker_version),
    ("SizeOfCode", lambda m: m.optional_header.size_of_code),
    ("SizeOfInitializedData", lambda m: m.optional_header.size_of_initialized_data),
    ("SizeOfUninitializedData", lambda m: m.optional_header.size_of_uninitialized_data),
    ("AddressOfEntryPoint", lambda m: m.optional_header.address_of_entry_point),
    ("BaseOfCode", lambda m: m.optional_header.base_of_code),
    ("BaseOfData", lambda m: m.optional_header.base_of_data),
    ("ImageBase", lambda m: m.optional_header.image_base),
    ("SectionAlignment", lambda m: m.optional_header.section_alignment),
    ("FileAlignment", lambda m: m.optional_header.file_alignment),
    ("MajorOperatingSystemVersion", lambda m: m.optional_header.major_operating_system_version),
    ("MinorOperatingSystemVersion", lambda m: m.optional_header.minor_operating_system_version),
    ("MajorImageVersion", lambda m: m.optional_header.major_image_version),
    ("MinorImageVersion", lambda m: m.optional_header.minor_image_version),
    ("MajorSubsystemVersion", lambda m: m.optional_header.major_subsystem_version),
    ("MinorSubsystemVersion", lambda m: m.optional_header.minor_subsystem_version),
    ("SizeOfImage", lambda m: m.optional_header.size_of_image),
    ("SizeOfHeaders", lambda m: m.optional_header.size_of_headers),
    ("CheckSum", lambda m: m.optional_header.checksum),
    ("Subsystem", lambda m: m.optional_header.subsystem),
    ("DllCharacteristics", lambda m: m.optional_header.dll_characteristics),
    ("SizeOfStackReserve", lambda m: m.optional_header.size_of_stack_reserve),
    ("SizeOfStackCommit", lambda m: m.optional_header.size_of_stack_commit),
    ("SizeOfHeapReserve", lambda m: m.optional_header.size_of_heap_reserve),
    ("SizeOfHeapCommit", lambda m: m.optional_header.size_of_heap_commit),
    ("LoaderFlags", lambda m: m.optional_header.loader_flags),
    ("NumberOfRvaAndSizes", lambda m: m.optional_header.number_of_rva_and_sizes),
)

SECTION_FEATURES = (
    "SectionsNb",
    "SectionsMeanEntropy", "SectionsMinEntropy", "SectionsMaxEntropy",
    "SectionsMeanRawsize", "SectionsMinRawsize", "SectionMaxRawsize",
    "SectionsMeanVirtualsize", "SectionsMinVirtualsize", "SectionMaxVirtualsize",
)

RESOURCE_FEATURES = (
    "ResourcesNb",
    "ResourcesMeanEntropy", "ResourcesMinEntropy", "ResourcesMaxEntropy",
    "ResourcesMeanSize", "ResourcesMinSize", "ResourcesMaxSize",
)

FEATURE_SCHEMA: tuple[str, ...] = (
    tuple(name for name, _ in HEADER_FEATURES) + SECTION_FEATURES + RESOURCE_FEATURES
)

# Dataset columns the extractor does not reproduce (import/export tables,
# load-config and version-info parsing are outside its scope).
UNSUPPORTED_COLUMNS = (
    "ImportsNbDLL", "ImportsNb", "ImportsNbOrdinal", "ExportNb",
    "LoadConfigurationSize", "VersionInformationSize",
)


def _mean_min_max(values) -> tuple[float, float, float]:
    if not values:
        return 0.0, 0.0, 0.0
    return math.fsum(values) / len(values), float(min(values)), float(max(values))


def extract_features(meta: PEMetadata) -> dict[str, float]:
    """Feature vector for one parsed binary, ordered as ``FEATURE_SCHEMA``.

    Section entropy is taken over the raw on-disk bytes. Aggregates over an
    empty section or resource list are 0.0.
    """
    out = {name: float(get(meta)) for name, get in HEADER_FEATURES}

    sections = meta.sections
    entropy = [shannon_entropy(meta.section_bytes(s)) for s in sections]
    raw = [float(s.raw_size) for s in sections]
    virt = [float(s.virtual_size) for s in sections]
    out["SectionsNb"] = float(len(sections))
    (out["SectionsMeanEntropy"], out["SectionsMinEntropy"],
     out["SectionsMaxEntropy"]) = _mean_min_max(entropy)
    (out["SectionsMeanRawsize"], out["SectionsMinRawsize"],
     out["SectionMaxRawsize"]) = _mean_min_max(raw)
    (out["SectionsMeanVirtualsize"], out["SectionsMinVirtualsize"],
     out["SectionMaxVirtualsize"]) = _mean_min_max(virt)

    leaves = meta.resources
    r_entropy = [shannon_entropy(meta.resource_bytes(r)) for r in leaves]
    r_size = [float(r.size) for r in leaves]
    out["ResourcesNb"] = float(len(leaves))
    (out["ResourcesMeanEntropy"], out["ResourcesMinEntropy"],
     out["ResourcesMaxEntropy"]) = _mean_min_max(r_entropy)
    (out["ResourcesMeanSize"], out["ResourcesMinSize"],
     out["ResourcesMaxSize"]) = _mean_min_max(r_size)
    return {name: out[name] for name in FEATURE_SCHEMA}


def extract_file(path) -> dict[str, float]:
    with open(path, "rb") as fh:
        return extract_features(parse_pe(fh.read()))
