import datetime
import logging

from fastapi import Request
from fastapi.responses import ORJSONResponse

from app.core.exceptions import BlochBandsError, InvalidInputError

logger = logging.getLogger(__name__)


def _error_response(status_code: int, error: str, message: str) -> ORJSONResponse:
    return ORJSONResponse(
        status_code=status_code,
        content={
            "error": error,
            "message": message,
            "timestamp": datetime.datetime.now().isoformat(),
        },
    )


async def error_handler_middleware(request: Request, call_next):
    """Map domain errors to HTTP status codes"""

    try:
        return await call_next(request)

    except InvalidInputError as e:
        logger.error(f"Invalid input: {str(e)}")
        return _error_response(400, "Invalid Input", str(e))

    except BlochBandsError as e:
        logger.error(f"Computation error: {str(e)}")
        return _error_response(422, type(e).__name__, str(e))

    except Exception as e:
        logger.error(f"Unexpected error: {str(e)}", exc_info=True)
        return _error_response(500, "Internal Server Error", "An unexpected error occurred")
