from contextlib import contextmanager
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Optional

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, sessionmaker

from src.core.config import settings
from src.db.base import Base


def database_url_for(out_dir: Optional[Path]) -> str:
    """Run store location: DATABASE_URL if configured, else <out_dir>/runs.db"""
    if settings.DATABASE_URL:
        return settings.DATABASE_URL
    if out_dir is None:
        return "sqlite:///:memory:"
    return f"sqlite:///{Path(out_dir).resolve() / 'runs.db'}"


@lru_cache(maxsize=8)
def get_engine(database_url: str) -> Engine:
    """Create (once per URL) an engine and make sure the tables exist"""
    engine = create_engine(database_url, pool_pre_ping=True)
    Base.metadata.create_all(bind=engine)
    return engine


@contextmanager
def session_scope(database_url: str) -> Iterator[Session]:
    """
    Transactional session for the run store.

    Commits on success, rolls back on error and always closes the session.

    Yields:
        Session: SQLAlchemy database session
    """
    factory = sessionmaker(bind=get_engine(database_url), autoflush=False, autocommit=False)
    db = factory()
    try:
        yield db
        db.commit()
    except Exception:
        db.rollback()
        raise
    finally:
        db.close()
