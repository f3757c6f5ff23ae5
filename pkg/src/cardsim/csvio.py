"""Strict CSV reading/writing shared by every on-disk format.

All formats use RFC 4180 style quoting: a field is quoted only when it
contains a comma, a double quote or a line break, and embedded quotes are
doubled.  Rows end with ``\\n``.  Parsing followed by :func:`write_rows`
reproduces any file already in that canonical form byte for byte.
"""

import csv
import io

from .errors import MalformedCSVError


def read_rows(text):
    """Parse ``text`` strictly into a list of rows (lists of str).

    Raises :class:`MalformedCSVError` with the offending line number on bad
    quoting.
    """
    reader = csv.reader(io.StringIO(text, newline=""), strict=True)
    rows = []
    try:
        for row in reader:
            rows.append(row)
    except csv.Error as exc:
        raise MalformedCSVError(str(exc), location=f"line {reader.line_num}") from None
    return rows


def write_rows(rows):
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def repair_quotes(text):
    """Best-effort fix for unescaped quotes inside quoted fields.

    A quoted field is taken to end only at a quote that is followed by a
    comma or the end of the line; any other quote inside it is doubled.
    Returns the repaired text, or None when the text has a quoted field
    that never closes on its line.
    """
    out_lines = []
    for line in text.split("\n"):
        fields = []
        i, n = 0, len(line)
        while True:
            if i < n and line[i] == '"':
                j = i + 1
                chars = []
                closed = False
                while j < n:
                    c = line[j]
                    if c == '"':
                        if j + 1 < n and line[j + 1] == '"':
                            chars.append('"')
                            j += 2
                            continue
                        if j + 1 == n or line[j + 1] == ",":
                            closed = True
                            j += 1
                            break
                        chars.append('"')
                        j += 1
                        continue
                    chars.append(c)
                    j += 1
                if not closed:
                    return None
                fields.append("".join(chars))
                i = j
            else:
                j = line.find(",", i)
                if j == -1:
                    j = n
                fields.append(line[i:j])
                i = j
            if i >= n:
                break
            i += 1  # skip comma
            if i == n:
                fields.append("")
                break
        if line == "":
            out_lines.append("")
        else:
            out_lines.append(write_rows([fields]).rstrip("\n"))
    return "\n".join(out_lines)
