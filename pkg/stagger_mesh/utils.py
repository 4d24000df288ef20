"""Utility functions - file I/O, CSV emission, logging setup."""

import csv
import json
import logging
import os
import sys
from typing import Any, Dict, Iterable, List, Sequence


class FileError(Exception):
    """Custom exception for file operations."""
    pass


class ParseError(Exception):
    """Custom exception for parsing operations."""
    pass


def _ensure_parent(filepath: str) -> None:
    parent = os.path.dirname(filepath)
    if parent:
        os.makedirs(parent, exist_ok=True)


def read_file(filepath: str) -> str:
    """
    Read a file and return its contents.

    Args:
        filepath: Path to the file to read

    Returns:
        str: File contents

    Raises:
        FileNotFoundError: If file does not exist
        FileError: If file cannot be read
    """
    try:
        with open(filepath, "r", encoding="utf-8") as f:
            return f.read()
    except FileNotFoundError:
        raise FileNotFoundError(f"File not found: {filepath}")
    except IOError as e:
        raise FileError(f"Failed to read file '{filepath}': {e}")


def write_file(filepath: str, content: str) -> None:
    """
    Write content to a file, creating parent directories.

    Args:
        filepath: Path to the file to write
        content: Content to write

    Raises:
        FileError: If file cannot be written
    """
    try:
        _ensure_parent(filepath)
        with open(filepath, "w", encoding="utf-8", newline="\n") as f:
            f.write(content)
    except IOError as e:
        raise FileError(f"Failed to write file '{filepath}': {e}")


def read_json(filepath: str) -> Dict[str, Any]:
    """
    Read a JSON file and return parsed data.

    Args:
        filepath: Path to the JSON file

    Returns:
        dict: Parsed JSON contents

    Raises:
        FileNotFoundError: If file does not exist
        ParseError: If file is not valid JSON
    """
    try:
        with open(filepath, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise FileNotFoundError(f"File not found: {filepath}")
    except json.JSONDecodeError as e:
        raise ParseError(f"Invalid JSON in file '{filepath}': {e}")


def write_json(filepath: str, data: Dict[str, Any], indent: int = None) -> None:
    """
    Write data to a JSON file.

    Output is compact by default (tables are large) and always ends with a
    newline so repeated writes of the same data are byte-identical.

    Args:
        filepath: Path to the JSON file
        data: Dictionary to write
        indent: JSON indentation level (default: compact)

    Raises:
        FileError: If file cannot be written
    """
    try:
        _ensure_parent(filepath)
        with open(filepath, "w", encoding="utf-8", newline="\n") as f:
            json.dump(data, f, indent=indent, separators=None if indent else (",", ":"))
            f.write("\n")
    except (IOError, TypeError, ValueError) as e:
        raise FileError(f"Failed to write JSON file '{filepath}': {e}")


def write_csv(filepath: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """
    Write a CSV file with a header row and LF line endings.

    Args:
        filepath: Path to the CSV file
        header: Column names
        rows: Row values; floats are written with repr precision

    Raises:
        FileError: If file cannot be written
    """
    try:
        _ensure_parent(filepath)
        with open(filepath, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow(row)
    except (IOError, csv.Error) as e:
        raise FileError(f"Failed to write CSV file '{filepath}': {e}")


def read_csv(filepath: str) -> List[Dict[str, str]]:
    """
    Read a CSV file written by write_csv.

    Args:
        filepath: Path to the CSV file

    Returns:
        list: One dict per data row, keyed by header

    Raises:
        FileNotFoundError: If file does not exist
        ParseError: If the file has no header
    """
    try:
        with open(filepath, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None:
                raise ParseError(f"CSV file '{filepath}' has no header")
            return list(reader)
    except FileNotFoundError:
        raise FileNotFoundError(f"File not found: {filepath}")


def series_path(pattern: str, step: int) -> str:
    """
    Expand a printf-style output pattern such as "series_%04d.vtk".

    Patterns without a placeholder get the step number inserted before the
    extension.
    """
    if "%" in pattern:
        try:
            return pattern % step
        except (TypeError, ValueError) as e:
            raise ParseError(f"Invalid series pattern '{pattern}': {e}")
    root, ext = os.path.splitext(pattern)
    return f"{root}_{step:04d}{ext}"


def setup_logging(debug: bool = False) -> None:
    """
    Route all package logging to standard error.

    Args:
        debug: Log at DEBUG instead of INFO
    """
    root = logging.getLogger("stagger_mesh")
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if debug else logging.INFO)
    root.propagate = False
