import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.responses import ORJSONResponse

from app.api.middleware.error_handler import error_handler_middleware
from app.api.middleware.logging_middleware import logging_middleware
from app.api.v1.routes import bands
from app.core.config import settings
from app.core.logging import setup_logging

setup_logging()
logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Lifecycle manager for startup and shutdown"""
    logger.info(f"Starting {settings.APP_NAME} service...")
    yield
    logger.info(f"Shutting down {settings.APP_NAME} service...")


app = FastAPI(
    title=settings.APP_NAME,
    description="Photonic band structures of two-dimensional periodic dielectrics",
    version=settings.VERSION,
    default_response_class=ORJSONResponse,
    lifespan=lifespan,
)

# Custom Middleware
app.middleware("http")(logging_middleware)
app.middleware("http")(error_handler_middleware)

app.include_router(bands.router, prefix="/api/v1/bands", tags=["Band Structure"])


@app.get("/")
async def root():
    return {
        "service": settings.APP_NAME,
        "version": settings.VERSION,
        "status": "healthy",
    }


@app.get("/health")
async def health_check():
    return {
        "status": "healthy",
        "service": "band-structure",
    }


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(
        "app.main:app",
        host=settings.HOST,
        port=settings.PORT,
        reload=settings.DEBUG,
    )
