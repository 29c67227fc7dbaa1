"""Module that loads tabular datasets for the ``copert estimate`` command.

A dataset is a CSV file with a header row (UTF-8, ``.`` as decimal mark). It
holds a response column, the composition columns, selected either by name or
by a common prefix, and optionally adjustment covariates. Compositions are
normalized row by row with the tolerance rule of
:func:`CoPert.simplex.as_compositions`.

"""
import logging
from logging import NullHandler

import numpy as np
import pandas as pd

from CoPert.exceptions import DatasetError, ValidationError
from CoPert.simplex import as_compositions

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())


def split_names(text):
    """Split a comma-separated list of column names."""
    if text is None:
        return []
    if not isinstance(text, str):
        return list(text)
    return [name.strip() for name in text.split(",") if name.strip()]


class Dataset:
    """Response, compositions and adjustment covariates of a sample.

    Parameters
    ----------
    y : numpy.ndarray
        ``n`` responses.
    Z : numpy.ndarray
        ``n x d`` compositions, rows summing to 1.
    X : numpy.ndarray, optional
        ``n x q`` adjustment covariates.
    composition_names : list of str
    adjust_names : list of str

    """
    def __init__(self, y, Z, X=None, composition_names=None,
                 adjust_names=None):
        self.y = y
        self.Z = Z
        self.X = X
        self.composition_names = composition_names or []
        self.adjust_names = adjust_names or []

    @property
    def n(self):
        return self.y.size

    @property
    def d(self):
        return self.Z.shape[1]

    @classmethod
    def from_frame(cls, frame, response, composition=None,
                   composition_prefix=None, adjust=None):
        """Build a dataset from a :class:`pandas.DataFrame`.

        Parameters
        ----------
        frame : pandas.DataFrame
        response : str
            Name of the response column.
        composition : str or list of str, optional
            Names of the composition columns (comma-separated string or
            list).
        composition_prefix : str, optional
            Prefix shared by the composition columns, used when
            ``composition`` is not given. Columns keep their file order.
        adjust : str or list of str, optional
            Names of the adjustment columns.

        Returns
        -------
        dataset : Dataset

        Raises
        ------
        DatasetError
            Raised if a column is missing, duplicated, non-numeric or holds
            missing values, or if a composition row is invalid.

        """
        columns = list(frame.columns)
        duplicated = sorted({c for c in columns if columns.count(c) > 1})
        if duplicated:
            raise DatasetError("Duplicated columns: {}".format(
                ", ".join(map(str, duplicated))))
        names = split_names(composition)
        if not names and composition_prefix:
            names = [c for c in columns if str(c).startswith(composition_prefix)
                     and c != response]
            if not names:
                raise DatasetError("No column starts with '{}'".format(
                    composition_prefix))
        if not names:
            raise DatasetError("No composition columns given")
        adjust_names = split_names(adjust)
        overlap = set(names) & (set(adjust_names) | {response})
        if overlap:
            raise DatasetError("Columns used twice: {}".format(
                ", ".join(sorted(map(str, overlap)))))
        y = _numeric_block(frame, [response])[:, 0]
        raw = _numeric_block(frame, names)
        try:
            Z = as_compositions(raw)
        except ValidationError as e:
            raise DatasetError("Invalid composition: {}".format(e)) from e
        X = _numeric_block(frame, adjust_names) if adjust_names else None
        logger.info("Loaded {} rows with {} composition columns and {} "
                    "adjustment columns".format(len(frame), len(names),
                                                len(adjust_names)))
        return cls(y, Z, X, names, adjust_names)

    @classmethod
    def from_csv(cls, path, response, composition=None,
                 composition_prefix=None, adjust=None):
        """Read a dataset from a CSV file, see :meth:`from_frame`."""
        try:
            frame = pd.read_csv(path, encoding="utf-8")
        except (OSError, pd.errors.ParserError,
                pd.errors.EmptyDataError) as e:
            raise DatasetError("Can't read '{}': {}".format(path, e)) from e
        return cls.from_frame(frame, response, composition,
                              composition_prefix, adjust)


def _numeric_block(frame, names):
    missing = [name for name in names if name not in frame.columns]
    if missing:
        raise DatasetError("Missing column: {}".format(", ".join(missing)))
    block = frame[names]
    for name in names:
        if not pd.api.types.is_numeric_dtype(block[name]):
            raise DatasetError("Column '{}' is not numeric".format(name))
        if block[name].isna().any():
            row = int(np.flatnonzero(block[name].isna().to_numpy())[0])
            raise DatasetError("Column '{}' has a missing value at row "
                               "{}".format(name, row + 1))
    return block.to_numpy(dtype=float)
