"""
Road map and enriched map file formats.

Maps are GeoJSON FeatureCollections of LineString roads in WGS84 (lon, lat)
order with a top-level `origin` member ([lat, lon]) anchoring the local
frame. Two-way roads (`"oneway": false`) load as a road plus its reversed
twin and are written back as a single feature.
"""
import json
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.core.geometry import PointXY, project_wgs84, unproject_xy
from src.core.lane_enrichment import EnrichedMap, LaneAssociation, LaneMarking, LanePoint, LaneSource, LineType
from src.core.road_graph import DEFAULT_SNAP_TOLERANCE, REVERSE_ID_OFFSET, Road, RoadClass, RoadGraph
from src.utils.errors import MapFormatError, ParseError
from src.utils.helpers import ANGLE_DECIMALS, PROB_DECIMALS, dumps_canonical, round_float

ENRICHED_FORMAT = "enriched-sd/1"
LATLON_DECIMALS = 9

logger = logging.getLogger(__name__)


def _read_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"Invalid JSON: {e.msg}", path, e.lineno)


def _write_json(path: str, obj: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_canonical(obj))
        f.write("\n")


def _parse_origin(collection: Dict[str, Any]) -> Tuple[float, float]:
    origin = collection.get("origin")
    if origin is not None:
        try:
            lat, lon = (float(v) for v in origin)
        except (TypeError, ValueError):
            raise MapFormatError(f"Invalid map origin: {origin!r}")
        return lat, lon
    features = collection.get("features") or []
    try:
        lon, lat = features[0]["geometry"]["coordinates"][0][:2]
        return float(lat), float(lon)
    except (IndexError, KeyError, TypeError):
        return 0.0, 0.0


def _parse_feature(feature: Dict[str, Any], index: int, origin: Tuple[float, float]) -> Tuple[Road, bool]:
    try:
        geometry = feature["geometry"]
        props = feature.get("properties") or {}
        if geometry.get("type") != "LineString":
            raise MapFormatError(f"Feature {index}: expected LineString geometry, got {geometry.get('type')}")
        road_id = props["road_id"]
        if not isinstance(road_id, int) or isinstance(road_id, bool) or not 0 <= road_id < REVERSE_ID_OFFSET:
            raise MapFormatError(f"Feature {index}: road_id must be an integer in [0, {REVERSE_ID_OFFSET})")
        road_class = RoadClass(props.get("class", RoadClass.ORDINARY.value))
        level = int(props.get("level", 0))
        successors = props.get("successors")
        oneway = props.get("oneway", True)
        points = tuple(project_wgs84(float(lat), float(lon), origin) for lon, lat, *_ in geometry["coordinates"])
    except KeyError as e:
        raise MapFormatError(f"Feature {index}: missing {e}")
    except (TypeError, ValueError) as e:
        raise MapFormatError(f"Feature {index}: {e}")
    if successors is not None:
        successors = tuple(int(s) for s in successors)
    if not isinstance(oneway, bool):
        raise MapFormatError(f"Feature {index}: oneway must be a boolean")
    return Road(road_id, points, road_class, level, successors), not oneway


def road_graph_from_geojson(collection: Dict[str, Any], snap_tolerance: float = DEFAULT_SNAP_TOLERANCE) -> RoadGraph:
    """Build a RoadGraph from a parsed GeoJSON FeatureCollection."""
    if not isinstance(collection, dict) or collection.get("type") != "FeatureCollection":
        raise MapFormatError("Map must be a GeoJSON FeatureCollection")
    origin = _parse_origin(collection)
    roads: List[Road] = []
    for index, feature in enumerate(collection.get("features") or []):
        road, two_way = _parse_feature(feature, index, origin)
        roads.append(road)
        if two_way:
            roads.append(road.reversed_twin())
    return RoadGraph(roads, origin=origin, snap_tolerance=snap_tolerance)


def load_road_graph(path: str, snap_tolerance: float = DEFAULT_SNAP_TOLERANCE) -> RoadGraph:
    """
    Load a GeoJSON road map.

    Args:
        path: Map file path
        snap_tolerance: Endpoint snap distance for derived connectivity

    Returns:
        RoadGraph in local meters around the map origin
    """
    graph = road_graph_from_geojson(_read_json(path), snap_tolerance)
    logger.info(f"Loaded {len(graph)} roads from {path}")
    return graph


def road_graph_to_geojson(graph: RoadGraph) -> Dict[str, Any]:
    twins = {road.twin_of for road in graph.roads.values() if road.twin_of is not None}
    features = []
    for rid in graph.road_ids():
        road = graph.road(rid)
        if road.twin_of is not None:
            continue
        coords = []
        for p in road.polyline:
            lat, lon = unproject_xy(p, graph.origin)
            coords.append([round_float(lon, LATLON_DECIMALS), round_float(lat, LATLON_DECIMALS)])
        props: Dict[str, Any] = {
            "road_id": rid,
            "class": road.road_class.value,
            "level": road.level,
            "oneway": rid not in twins,
        }
        if road.successors is not None:
            props["successors"] = list(road.successors)
        features.append({"type": "Feature", "geometry": {"type": "LineString", "coordinates": coords},
                         "properties": props})
    return {"type": "FeatureCollection", "origin": list(graph.origin), "features": features}


def write_map(path: str, graph: RoadGraph) -> None:
    _write_json(path, road_graph_to_geojson(graph))


def lane_to_dict(lane: LaneMarking) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "lane_id": lane.lane_id,
        "source": lane.source.value,
        "points": [
            [round_float(p.position.x), round_float(p.position.y), round_float(p.heading, ANGLE_DECIMALS),
             p.line_type.value]
            for p in lane.points
        ],
    }
    if lane.level is not None:
        data["level"] = lane.level
    return data


def lane_from_dict(obj: Dict[str, Any]) -> LaneMarking:
    points = tuple(
        LanePoint(PointXY(float(x), float(y)), float(heading), LineType(line_type))
        for x, y, heading, line_type in obj["points"]
    )
    level = obj.get("level")
    return LaneMarking(int(obj["lane_id"]), points, LaneSource(obj.get("source", LaneSource.POLYLINE.value)),
                       int(level) if level is not None else None)


def association_to_dict(assoc: LaneAssociation) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "lane_id": assoc.lane_id,
        "road_id": assoc.road_id,
        "probability": round_float(assoc.probability, PROB_DECIMALS),
    }
    if assoc.per_point is not None:
        data["per_point"] = [[k, round_float(p, PROB_DECIMALS)] for k, p in assoc.per_point]
    return data


def association_from_dict(obj: Dict[str, Any]) -> LaneAssociation:
    per_point = obj.get("per_point")
    return LaneAssociation(
        int(obj["lane_id"]),
        int(obj["road_id"]),
        float(obj["probability"]),
        tuple((int(k), float(p)) for k, p in per_point) if per_point is not None else None,
    )


def write_enriched(path: str, enriched: EnrichedMap) -> None:
    """Write the enriched map as a single self-contained JSON document."""
    document = {
        "format": ENRICHED_FORMAT,
        "map": road_graph_to_geojson(enriched.graph),
        "snap_tolerance": enriched.graph.snap_tolerance,
        "lanes": [lane_to_dict(lane) for lane in enriched.lanes.values()],
        "associations": [association_to_dict(a) for a in enriched.associations],
    }
    _write_json(path, document)
    logger.info(f"Wrote enriched map with {len(enriched.lanes)} lanes and {len(enriched.associations)} associations to {path}")


def load_enriched(path: str) -> EnrichedMap:
    """Load an `enriched-sd/1` document."""
    document = _read_json(path)
    if not isinstance(document, dict) or document.get("format") != ENRICHED_FORMAT:
        raise MapFormatError(f"{path}: not an {ENRICHED_FORMAT} document")
    try:
        graph = road_graph_from_geojson(document["map"], float(document.get("snap_tolerance", DEFAULT_SNAP_TOLERANCE)))
        lanes = [lane_from_dict(obj) for obj in document["lanes"]]
        associations = [association_from_dict(obj) for obj in document["associations"]]
    except (KeyError, TypeError, ValueError) as e:
        raise MapFormatError(f"{path}: malformed enriched map ({e})")
    by_id: Dict[int, LaneMarking] = {}
    for lane in lanes:
        if lane.lane_id in by_id:
            raise MapFormatError(f"{path}: duplicate lane id {lane.lane_id}")
        by_id[lane.lane_id] = lane
    logger.info(f"Loaded enriched map from {path}: {len(graph)} roads, {len(by_id)} lanes")
    return EnrichedMap(graph, by_id, associations)


def write_overlay(path: str, graph: RoadGraph, positions: Sequence[PointXY],
                  road_ids: Sequence[Optional[int]]) -> None:
    """
    GeoJSON overlay of a matched trajectory: one feature per distinct matched
    road (in order of first match) and the trajectory itself.
    """
    def lonlat(p: PointXY) -> List[float]:
        lat, lon = unproject_xy(p, graph.origin)
        return [round_float(lon, LATLON_DECIMALS), round_float(lat, LATLON_DECIMALS)]

    features = []
    seen = set()
    for rid in road_ids:
        if rid is None or rid in seen:
            continue
        seen.add(rid)
        road = graph.road(rid)
        features.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": [lonlat(p) for p in road.polyline]},
            "properties": {"kind": "matched_road", "road_id": rid, "class": road.road_class.value,
                           "level": road.level},
        })
    if positions:
        coords = [lonlat(p) for p in positions]
        geometry = ({"type": "LineString", "coordinates": coords} if len(coords) > 1
                    else {"type": "Point", "coordinates": coords[0]})
        features.append({"type": "Feature", "geometry": geometry,
                         "properties": {"kind": "trajectory", "points": len(coords)}})
    _write_json(path, {"type": "FeatureCollection", "features": features})
