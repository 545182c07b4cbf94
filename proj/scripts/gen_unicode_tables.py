"""Regenerates include/clap/unicode_tables.hpp from the `regex` module's classes.

The pre-tokenizer needs \\p{L}, \\p{N} and \\s exactly as the reference
regex engine defines them.
"""
import sys

import regex

CLASSES = [("letter", r"\p{L}"), ("number", r"\p{N}"), ("space", r"\s")]


def ranges(pattern):
    rx = regex.compile(pattern)
    out, start, prev = [], None, None
    for cp in range(0x110000):
        if 0xD800 <= cp <= 0xDFFF:
            hit = False
        else:
            hit = rx.fullmatch(chr(cp)) is not None
        if hit and start is None:
            start = cp
        if not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def main(path):
    lines = [
        "// Generated by scripts/gen_unicode_tables.py. Do not edit.",
        "#pragma once",
        "",
        "#include <array>",
        "#include <cstdint>",
        "",
        "namespace clap::unicode_tables {",
        "",
        "struct Range {",
        "  std::uint32_t lo;",
        "  std::uint32_t hi;",
        "};",
        "",
    ]
    for name, pat in CLASSES:
        rs = ranges(pat)
        lines.append(f"inline constexpr std::array<Range, {len(rs)}> k_{name} = {{{{")
        for lo, hi in rs:
            lines.append(f"    {{0x{lo:X}, 0x{hi:X}}},")
        lines.append("}};")
        lines.append("")
    lines.append("}  // namespace clap::unicode_tables")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "include/clap/unicode_tables.hpp")
