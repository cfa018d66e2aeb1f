"""
Mapping session orchestration

Stage 1 (normals, geometric segmentation, surface fusion) runs in a worker pool and
feeds stage 2 (map, superpoints, graph) through a bounded queue. Stage 2 consumes frames
strictly in stream order, so results do not depend on worker scheduling. Queries work on
a copy of the graph and never mutate the session.
"""

import logging
import queue
import threading
import time
from collections.abc import Callable, Iterable, Iterator
from concurrent.futures import Future, ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .core import ClassId, ClassSet, Frame, InstanceId, SuperpointLabel, validate_frame
from .errors import DatasetError, EmptyMapError
from .evaluation import GroundTruth, MetricsReport, Prediction, evaluate_predictions
from .export import (
    InstanceRecord,
    read_instances,
    read_labeled_ply,
    write_instances,
    write_labeled_ply,
    write_superpoints,
    write_timing,
)
from .graph import InstanceObservation, SuperpointGraph, spatial_confidence
from .instances import InstanceAssociator, InstanceResult, assign_instances
from .regularizer import EnergyProblem, SwapResult, alpha_beta_swap
from .segmentation import estimate_normals, segment_depth
from .settings import PipelineConfig
from .superpoints import MergePolicy, MergeRecord, SuperpointManager
from .surfaces import Surface, canonical_instances, fuse_masks, panoptic_confidence
from .tsdf import LabeledMesh, LabelTsdfMap

logger = logging.getLogger(__name__)

MAPPING_STAGES = ("segmentation", "fusion", "integration", "superpoints", "graph")
QUERY_STAGES = ("regularization", "refinement", "meshing")

_DONE = object()


class StageTimer:
    """Wall-clock totals per named stage"""

    def __init__(self) -> None:
        self._seconds: dict[str, list[float]] = {}

    @contextmanager
    def measure(self, stage: str, sink: dict[str, float] | None = None) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.record(stage, time.perf_counter() - start, sink)

    def record(self, stage: str, seconds: float, sink: dict[str, float] | None = None) -> None:
        self._seconds.setdefault(stage, []).append(seconds)
        if sink is not None:
            sink[stage] = sink.get(stage, 0.0) + seconds

    def rows(self, order: Iterable[str] = MAPPING_STAGES + QUERY_STAGES) -> list[tuple[str, int, float, float]]:
        """(stage, calls, total seconds, mean milliseconds) for every recorded stage"""
        rows = []
        for stage in order:
            values = self._seconds.get(stage)
            if values:
                total = sum(values)
                rows.append((stage, len(values), total, 1000.0 * total / len(values)))
        return rows

    def total(self, stage: str) -> float:
        return sum(self._seconds.get(stage, []))


@dataclass(slots=True)
class FrameStats:
    """Per-frame counters reported by the mapping loop"""
    frame_index: int
    surfaces: int = 0
    new_superpoints: int = 0
    merges: int = 0
    instances_hit: int = 0
    stage_seconds: dict[str, float] = field(default_factory=dict)


@dataclass
class SessionProgress:
    frames: int = 0
    surfaces: int = 0
    minted: int = 0
    merges: int = 0
    frames_without_surfaces: int = 0


@dataclass(frozen=True, slots=True, eq=False)
class PreparedFrame:
    """Stage 1 output for one frame"""
    frame: Frame
    surfaces: list[Surface]
    seconds: dict[str, float]


def prepare_frame(frame: Frame, config: PipelineConfig, classes: ClassSet | None = None) -> PreparedFrame:
    """
    Segment one frame and fuse its panoptic masks into surfaces.

    Raises:
        DatasetError: If the frame violates a Frame invariant
    """
    violations = validate_frame(frame, classes)
    if violations:
        detail = "; ".join(str(v) for v in violations)
        raise DatasetError(f"Frame {frame.frame_index} failed validation: {detail}", violations=violations)
    seconds: dict[str, float] = {}
    start = time.perf_counter()
    normals = estimate_normals(frame.depth, frame.intrinsics)
    segments = segment_depth(frame.depth, normals, frame.intrinsics, config.segmentation_params())
    seconds["segmentation"] = time.perf_counter() - start
    start = time.perf_counter()
    surfaces = fuse_masks(frame, segments, config.min_surface_px, classes)
    seconds["fusion"] = time.perf_counter() - start
    return PreparedFrame(frame, surfaces, seconds)


class MapSession:
    """
    Incremental mapping state: the Label-TSDF map, the superpoint manager, the semantic
    graph and the instance associator.
    """

    def __init__(self, config: PipelineConfig | None = None, classes: ClassSet | None = None):
        self.config = config or PipelineConfig()
        self.classes = classes
        self.map = LabelTsdfMap(self.config.voxel_size, self.config.truncation, self.config.block_size)
        self.graph = SuperpointGraph()
        self.associator = InstanceAssociator(self.config.association_min_ratio)
        self.manager = SuperpointManager(
            self.map,
            self.graph,
            self.config.assignment_params(),
            MergePolicy.create(self.config.merge_policy),
            listeners=[self.associator.fold],
        )
        self.timer = StageTimer()
        self.progress = SessionProgress()
        self.frame_stats: list[FrameStats] = []
        self.peak_map_bytes = 0

    @property
    def merge_log(self) -> list[MergeRecord]:
        return self.manager.merge_log

    @property
    def superpoint_labels(self) -> list[SuperpointLabel]:
        return self.manager.live_labels

    def is_empty(self) -> bool:
        return self.map.is_empty()

    def _spatial(self, a: SuperpointLabel, b: SuperpointLabel) -> float:
        return spatial_confidence(a, b, self.map, self.config.sigma_spatial, self.config.coarse_factor)

    def integrate(self, prepared: PreparedFrame) -> FrameStats:
        """Stage 2 for one frame; frames must arrive in sequence order"""
        frame, surfaces = prepared.frame, prepared.surfaces
        stats = FrameStats(frame.frame_index, surfaces=len(surfaces))
        for stage, seconds in prepared.seconds.items():
            self.timer.record(stage, seconds, stats.stage_seconds)

        with self.timer.measure("integration", stats.stage_seconds):
            self.map.integrate_depth(frame)

        with self.timer.measure("superpoints", stats.stage_seconds):
            minted = self.manager.counters.minted
            assignments = self.manager.assign_surfaces(surfaces)
            self.associator.associate_frame(surfaces, assignments)
            merges = self.manager.merge_superpoints(frame.frame_index)
            stats.new_superpoints = self.manager.counters.minted - minted
            stats.merges = len(merges)

        with self.timer.measure("graph", stats.stage_seconds):
            mask, instances = canonical_instances(frame, self.classes)
            observations = []
            for instance_id in sorted(instances):
                hits = self.map.raycast_instance(frame, instance_id, mask)
                if hits:
                    instance = instances[instance_id]
                    observations.append(InstanceObservation(
                        instance_id, instance.category, panoptic_confidence(instance, self.classes), hits
                    ))
            self.graph.accumulate_frame(observations, self._spatial, self.config.max_hits_per_instance)
            stats.instances_hit = len(observations)

        self.progress.frames += 1
        self.progress.surfaces += len(surfaces)
        self.progress.minted += stats.new_superpoints
        self.progress.merges += stats.merges
        if not surfaces:
            self.progress.frames_without_surfaces += 1
        self.peak_map_bytes = max(self.peak_map_bytes, self.map.memory_bytes())
        self.frame_stats.append(stats)
        logger.debug(
            f"Frame {frame.frame_index}: {stats.surfaces} surfaces, {stats.new_superpoints} new superpoints, "
            f"{stats.merges} merges, {stats.instances_hit} instances hit"
        )
        return stats


def _offer(channel: queue.Queue, item: object, stop: threading.Event) -> bool:
    while not stop.is_set():
        try:
            channel.put(item, timeout=0.1)
            return True
        except queue.Full:
            continue
    return False


def _produce(
    stream: Iterable[Frame],
    executor: ThreadPoolExecutor,
    channel: queue.Queue,
    stop: threading.Event,
    prepare: Callable[[Frame], PreparedFrame],
) -> None:
    try:
        for frame in stream:
            future = executor.submit(prepare, frame)
            if not _offer(channel, future, stop):
                future.cancel()
                return
    except Exception as e:
        _offer(channel, e, stop)
        return
    _offer(channel, _DONE, stop)


def run_mapping(
    stream: Iterable[Frame],
    config: PipelineConfig | None = None,
    classes: ClassSet | None = None,
    session: MapSession | None = None,
) -> MapSession:
    """
    Map a frame stream.

    Args:
        stream: Frames in sequence order; may be lazy
        config: Pipeline parameters
        classes: Configured classes, used for validation and panoptic confidences
        session: Existing session to extend

    Returns:
        The session after the last frame

    Raises:
        DatasetError: On the first invalid frame
    """
    session = session or MapSession(config, classes)
    config = session.config

    def prepare(frame: Frame) -> PreparedFrame:
        return prepare_frame(frame, config, session.classes)

    channel: queue.Queue = queue.Queue(maxsize=config.queue_capacity)
    stop = threading.Event()
    executor = ThreadPoolExecutor(max_workers=config.workers, thread_name_prefix="spmap-stage1")
    producer = threading.Thread(
        target=_produce, args=(stream, executor, channel, stop, prepare), name="spmap-ingest", daemon=True
    )
    producer.start()
    try:
        while True:
            item = channel.get()
            if item is _DONE:
                break
            if isinstance(item, Exception):
                raise item
            assert isinstance(item, Future)
            session.integrate(item.result())
    finally:
        stop.set()
        producer.join()
        executor.shutdown(wait=True, cancel_futures=True)

    p = session.progress
    logger.info(
        f"Mapped {p.frames} frames: {len(session.superpoint_labels)} superpoints "
        f"({p.minted} minted, {p.merges} merged), {p.frames_without_surfaces} frames without surfaces"
    )
    return session


@dataclass(frozen=True, slots=True, eq=False)
class QueryResult:
    """
    Attributes:
        semantic: Class per live superpoint
        instances: Instances and the superpoint -> instance map
        mesh: Labeled mesh of the map
        swap: Regularization trace, None when regularization is disabled
        seconds: Wall time per query stage
    """
    semantic: dict[SuperpointLabel, ClassId]
    instances: InstanceResult
    mesh: LabeledMesh
    swap: SwapResult | None
    seconds: dict[str, float] = field(default_factory=dict)

    def instance_records(self) -> list[InstanceRecord]:
        return [
            InstanceRecord(i.instance_id, i.category, i.score, tuple(sorted(i.members)))
            for i in self.instances.instances
        ]

    def prediction(self) -> Prediction:
        """Mesh vertices as labeled prediction points"""
        return Prediction(
            points=self.mesh.vertices,
            semantic_ids=self.mesh.semantic_ids,
            instance_ids=self.mesh.instance_ids,
            instance_scores={i.instance_id: i.score for i in self.instances.instances},
            instance_classes={i.instance_id: i.category for i in self.instances.instances},
            superpoint_ids=self.mesh.superpoint_ids,
        )


def query_semantic_instance(session: MapSession) -> QueryResult:
    """
    Regularize semantics, build and refine instances, and extract the labeled mesh.

    Raises:
        EmptyMapError: If no frame has been integrated
    """
    if session.is_empty():
        raise EmptyMapError("Cannot query a session without integrated frames")
    config = session.config
    graph = session.graph.copy()
    seconds: dict[str, float] = {}

    start = time.perf_counter()
    problem = EnergyProblem.from_graph(graph, config.energy_params())
    swap = None
    if config.regularization:
        swap = alpha_beta_swap(problem, max_sweeps=config.max_sweeps)
        semantic = dict(swap.labeling)
    else:
        semantic = problem.initial_labeling()
    seconds["regularization"] = time.perf_counter() - start

    start = time.perf_counter()
    instances = assign_instances(
        semantic, session.associator.dominant_instances(), graph, config.refinement_params(), config.refinement
    )
    seconds["refinement"] = time.perf_counter() - start

    start = time.perf_counter()
    mesh = session.map.extract_labeled_mesh(semantic, instances.assignment)
    seconds["meshing"] = time.perf_counter() - start

    logger.info(f"Query: {len(semantic)} superpoints, {len(instances.instances)} instances, {mesh.vertex_count} vertices")
    return QueryResult(semantic, instances, mesh, swap, seconds)


def evaluation_classes(config: PipelineConfig, classes: ClassSet | None) -> list[ClassId] | None:
    if config.evaluation_classes:
        return sorted(config.evaluation_classes)
    if classes is not None:
        return sorted(classes.things)
    return None


def evaluate(
    result: QueryResult,
    gt: GroundTruth,
    config: PipelineConfig | None = None,
    classes: ClassSet | None = None,
) -> MetricsReport:
    """Score a query result against labeled ground-truth points"""
    config = config or PipelineConfig()
    names = dict(classes.names) if classes is not None else None
    return evaluate_predictions(
        result.prediction(), gt, evaluation_classes(config, classes), config.transfer_distance, names
    )


@dataclass(frozen=True, slots=True)
class BenchmarkReport:
    """
    Attributes:
        rows: (stage, calls, total seconds, mean milliseconds) per stage
        frame_totals: Summed stage-2 and stage-1 seconds per frame
        peak_map_bytes: Largest map memory estimate seen while mapping
        frames: Frames mapped
    """
    rows: tuple[tuple[str, int, float, float], ...]
    frame_totals: tuple[float, ...]
    peak_map_bytes: int
    frames: int

    def total(self, stage: str) -> float:
        return next((row[2] for row in self.rows if row[0] == stage), 0.0)


def benchmark(
    stream: Iterable[Frame], config: PipelineConfig | None = None, classes: ClassSet | None = None
) -> tuple[MapSession, QueryResult | None, BenchmarkReport]:
    """Map a stream, run one query, and report per-stage timing and memory"""
    session = run_mapping(stream, config, classes)
    result = None
    if not session.is_empty():
        result = query_semantic_instance(session)
        for stage, seconds in result.seconds.items():
            session.timer.record(stage, seconds)
    report = BenchmarkReport(
        rows=tuple(session.timer.rows()),
        frame_totals=tuple(sum(s.stage_seconds.values()) for s in session.frame_stats),
        peak_map_bytes=session.peak_map_bytes,
        frames=session.progress.frames,
    )
    return session, result, report


def save_outputs(
    directory: Path,
    session: MapSession,
    result: QueryResult,
    metrics: MetricsReport | None = None,
) -> dict[str, Path]:
    """
    Write mesh.ply, points.ply, superpoints.txt, instances.txt, timing.txt and, when
    given, metrics.txt.
    """
    directory.mkdir(parents=True, exist_ok=True)
    instance_of: dict[SuperpointLabel, InstanceId] = result.instances.assignment
    paths = {
        "mesh": write_labeled_ply(directory / "mesh.ply", result.mesh),
        "points": write_labeled_ply(directory / "points.ply", result.mesh, faces=False),
        "superpoints": write_superpoints(directory / "superpoints.txt", result.semantic, instance_of),
        "instances": write_instances(directory / "instances.txt", result.instance_records()),
        "timing": write_timing(directory / "timing.txt", session.timer.rows(), session.peak_map_bytes),
    }
    if metrics is not None:
        paths["metrics"] = directory / "metrics.txt"
        paths["metrics"].write_text(metrics.to_text())
    logger.debug(f"Wrote outputs to {directory}")
    return paths


def load_prediction(directory: Path) -> Prediction:
    """
    Rebuild a prediction from points.ply and instances.txt written by save_outputs.

    Raises:
        DatasetError: If either file is missing or malformed
    """
    points = read_labeled_ply(directory / "points.ply")
    records = read_instances(directory / "instances.txt")
    return Prediction(
        points=points.vertices,
        semantic_ids=points.semantic_ids,
        instance_ids=points.instance_ids,
        instance_scores={r.instance_id: r.confidence for r in records},
        instance_classes={r.instance_id: r.category for r in records},
        superpoint_ids=points.superpoint_ids,
    )
