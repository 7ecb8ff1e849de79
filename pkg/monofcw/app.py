import logging
import math

from fastapi import Depends, FastAPI, HTTPException, Response

from monofcw import config, fcw_engine, formats, geometry, schema


config.setup_logging()
logger = logging.getLogger(__name__)
app = FastAPI(
    title="monofcw",
    description="Ground distance measurement for a calibrated forward camera",
)


def load_params():
    """The configured calibration, read fresh for each request."""
    if config.CALIBRATION is None:
        logger.info("request with no MONOFCW_CALIBRATION configured")
        raise HTTPException(503, "No calibration configured")
    path = config.CALIBRATION
    if not path.exists():
        raise HTTPException(404, f"Calibration {path} not found")
    try:
        return formats.read_calibration(path)
    except formats.FormatError as exc:
        logger.info(f"bad calibration file: {exc}")
        raise HTTPException(503, f"Calibration {path} is invalid")


@app.get("/")
def root(params: schema.CameraParams = Depends(load_params)):
    return Response(
        content=(
            f"monofcw: camera at {params.h} m, horizon on row "
            f"{geometry.horizon_row(params):.3f} of {params.image_w}x{params.image_h}"
        ),
        media_type="text/plain",
    )


@app.get("/horizon")
def horizon(params: schema.CameraParams = Depends(load_params)):
    return {"horizon_row": geometry.horizon_row(params)}


@app.post("/measure", response_model=schema.DistanceList)
def measure(body: schema.RowList, params: schema.CameraParams = Depends(load_params)):
    """Ground distances of image rows."""
    try:
        distances = [geometry.distance_from_row(params, v) for v in body.rows]
    except geometry.GeometryError as exc:
        logger.info(f"measure: {exc.__class__.__name__}: {exc}")
        raise HTTPException(400, str(exc))
    return schema.DistanceList(distances=distances)


@app.post("/row", response_model=schema.RowList)
def row(body: schema.DistanceList, params: schema.CameraParams = Depends(load_params)):
    """Image rows of ground distances."""
    try:
        rows = [geometry.row_from_distance(params, d) for d in body.distances]
    except geometry.GeometryError as exc:
        logger.info(f"row: {exc}")
        raise HTTPException(400, str(exc))
    return schema.RowList(rows=rows)


@app.post("/fcw", response_model=schema.FcwResponse)
def fcw(body: schema.FcwRequest):
    """One step of the collision warning track. The caller keeps the state."""
    try:
        if body.distance is None:
            state, level = fcw_engine.coast(body.state, body.dt, body.config)
        else:
            state, level = fcw_engine.update(body.state, body.distance, body.dt, body.config)
    except fcw_engine.FcwError as exc:
        raise HTTPException(400, str(exc))
    contact = fcw_engine.time_to_contact(state)
    return schema.FcwResponse(
        state=state,
        level=level.name,
        time_to_contact=contact if math.isfinite(contact) else None,
    )
