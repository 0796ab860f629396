import logging

from database import engine, Base
from models import Run, RunCheck  # noqa: F401  registers the tables

logger = logging.getLogger(__name__)


def create_tables(bind=engine):
    logger.info("Creating run ledger tables...")
    Base.metadata.create_all(bind=bind)
    logger.info("Tables created successfully")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    create_tables()
