from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator


class SplitProtocol(str, Enum):
    """Generalization protocol used to build evaluation splits"""
    STRONG = "strong"
    WEAK = "weak"


class InteractionMatrix(BaseModel):
    """
    Sparse binary user-item matrix with its original id vocabularies.

    `matrix` is canonical CSR: sorted indices, no duplicates, every stored value 1.
    Row u belongs to `user_ids[u]`, column i to `item_ids[i]`.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix: sp.csr_matrix
    user_ids: List[str]
    item_ids: List[str]

    @model_validator(mode="after")
    def _check_canonical(self) -> "InteractionMatrix":
        m, n = self.matrix.shape
        if m != len(self.user_ids) or n != len(self.item_ids):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{len(self.user_ids)} users x {len(self.item_ids)} items"
            )
        if not self.matrix.has_canonical_format:
            raise ValueError("matrix must have sorted, duplicate-free indices")
        if self.matrix.nnz and not np.all(self.matrix.data == 1):
            raise ValueError("matrix must be binary")
        return self

    @classmethod
    def from_pairs(
        cls,
        users: Sequence[int],
        items: Sequence[int],
        user_ids: Sequence[str],
        item_ids: Sequence[str],
    ) -> "InteractionMatrix":
        """Build a binary matrix from index pairs; duplicate pairs collapse to one entry"""
        m, n = len(user_ids), len(item_ids)
        rows = np.asarray(users, dtype=np.int64)
        cols = np.asarray(items, dtype=np.int64)
        matrix = sp.csr_matrix(
            (np.ones(len(rows), dtype=np.float64), (rows, cols)), shape=(m, n)
        )
        matrix.sum_duplicates()
        matrix.data[:] = 1.0
        matrix.sort_indices()
        return cls(matrix=matrix, user_ids=list(user_ids), item_ids=list(item_ids))

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "InteractionMatrix":
        """Build from a dense 0/1 array with synthetic ids u0.. / i0.."""
        dense = np.asarray(dense)
        users, items = np.nonzero(dense)
        return cls.from_pairs(
            users, items,
            [f"u{u}" for u in range(dense.shape[0])],
            [f"i{i}" for i in range(dense.shape[1])],
        )

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    @property
    def user_degrees(self) -> np.ndarray:
        return np.diff(self.matrix.indptr).astype(np.int64)

    @property
    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.matrix.indices, minlength=self.cols).astype(np.int64)

    @property
    def density(self) -> float:
        return self.nnz / float(self.rows * self.cols) if self.rows and self.cols else 0.0

    def pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        """(user-index, item-index) arrays in row-major order"""
        coo = self.matrix.tocoo()
        return coo.row.astype(np.int64), coo.col.astype(np.int64)

    def user_items(self, u: int) -> np.ndarray:
        """Sorted item indices of user u"""
        return self.matrix.indices[self.matrix.indptr[u]:self.matrix.indptr[u + 1]]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


class EvalSplit(BaseModel):
    """
    Fold-in / held-out pair for one evaluation set.

    Both matrices share the same user rows and the training item vocabulary.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    foldin: InteractionMatrix
    heldout: InteractionMatrix

    @model_validator(mode="after")
    def _check_aligned(self) -> "EvalSplit":
        if self.foldin.user_ids != self.heldout.user_ids:
            raise ValueError("foldin and heldout must cover the same users")
        if self.foldin.item_ids != self.heldout.item_ids:
            raise ValueError("foldin and heldout must share the item vocabulary")
        if self.foldin.nnz and self.heldout.nnz and self.foldin.matrix.multiply(self.heldout.matrix).count_nonzero():
            raise ValueError("foldin and heldout interactions must be disjoint")
        return self

    @property
    def users(self) -> int:
        return self.foldin.rows


class SplitBundle(BaseModel):
    """Training matrix plus validation/test fold-in and held-out sets"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    train: InteractionMatrix
    validation: Optional[EvalSplit] = None
    test: EvalSplit
    protocol: SplitProtocol
    seed: int

    @model_validator(mode="after")
    def _check_vocabulary(self) -> "SplitBundle":
        for split in (self.validation, self.test):
            if split is not None and split.foldin.item_ids != self.train.item_ids:
                raise ValueError("evaluation splits must use the training item vocabulary")
        return self

    def with_train(self, train: InteractionMatrix) -> "SplitBundle":
        """Copy of the bundle with a replaced training matrix (same vocabulary)"""
        return self.model_copy(update={"train": train})


class NoiseConfig(BaseModel):
    """Fraction of observed interactions replaced by unobserved cells"""
    ratio_percent: float = Field(..., ge=0, le=100, description="Percentage r of nnz replaced")
    seed: int = 0
