"""Feature track bookkeeping with base-frame retention.

After a pose-only update a track keeps only its base-frame observation; new
observations then accumulate on top of it and the track is reused. A track is
retired when it stops being observed or its base frame leaves the window.
No anchor change is needed because nothing in the state depends on the base
frame.
"""

from __future__ import annotations

from enum import Enum

from .landmark import FeatureTrack, NormalizedObs

POSEONLY = "poseonly"
BASELINE = "baseline"
MIN_POSEONLY_OBS = 4


class TrackStatus(Enum):
    ACCUMULATING = "accumulating"
    UPDATED = "updated-awaiting-new-obs"
    RETIRED = "retired"


class DuplicateObservationError(ValueError):
    pass


class TrackStore:
    """Tracks keyed by feature id.

    Parameters
    ----------
    mode:
        ``"poseonly"`` (ready at 4 observations, pruned to the base frame after
        an update) or ``"baseline"`` (ready at ``max_track_length``
        observations, deleted after an update).
    """

    def __init__(self, mode: str = POSEONLY, max_track_length: int = 5,
                 min_obs: int = MIN_POSEONLY_OBS):
        if mode not in (POSEONLY, BASELINE):
            raise ValueError(f"unknown track mode {mode!r}")
        self.mode = mode
        self.max_track_length = max_track_length
        self.min_obs = min_obs
        self.tracks: dict = {}
        self.status: dict = {}
        self.last_frame = None
        self._updated_at: dict = {}

    def __len__(self):
        return len(self.tracks)

    def __contains__(self, feature_id):
        return feature_id in self.tracks

    def ingest(self, frame_id: int, detections) -> None:
        """Append ``(feature_id, NormalizedObs | xy)`` detections of the newest frame."""
        seen = set()
        for fid, obs in detections:
            if not isinstance(obs, NormalizedObs):
                obs = NormalizedObs(frame_id, obs)
            if obs.frame_id != frame_id:
                raise ValueError(f"observation frame {obs.frame_id} != ingest frame {frame_id}")
            if fid in seen:
                raise DuplicateObservationError(f"feature {fid} detected twice in frame {frame_id}")
            seen.add(fid)
            track = self.tracks.get(fid)
            if track is None:
                self.tracks[fid] = FeatureTrack(fid, frame_id, [obs])
                self.status[fid] = TrackStatus.ACCUMULATING
                continue
            if track.obs[-1].frame_id >= frame_id:
                raise DuplicateObservationError(f"feature {fid} already observed at frame {frame_id}")
            track.obs.append(obs)
        self.last_frame = frame_id

    def lost_tracks(self, frame_id: int) -> list:
        """Tracks with no observation in ``frame_id``."""
        return [t for t in self.tracks.values() if t.obs[-1].frame_id != frame_id]

    def ready_for_update(self) -> list:
        ready = []
        for fid, t in self.tracks.items():
            if self._updated_at.get(fid) == self.last_frame:
                continue
            if self.mode == POSEONLY:
                if len(t.obs) >= self.min_obs:
                    ready.append(t)
            elif len(t.obs) >= self.max_track_length:
                ready.append(t)
        return ready

    def prune_after_update(self, tracks) -> None:
        for t in tracks:
            fid = t.feature_id if isinstance(t, FeatureTrack) else t
            track = self.tracks.get(fid)
            if track is None:
                continue
            self._updated_at[fid] = self.last_frame
            if self.mode == BASELINE:
                self.retire(fid)
                continue
            track.obs = [o for o in track.obs if o.frame_id == track.base_frame_id]
            self.status[fid] = TrackStatus.UPDATED

    def retire(self, feature_id) -> None:
        self.tracks.pop(feature_id, None)
        self.status[feature_id] = TrackStatus.RETIRED

    def retire_lost(self, frame_id: int) -> list:
        lost = self.lost_tracks(frame_id)
        for t in lost:
            self.retire(t.feature_id)
        return lost

    def tracks_observing(self, frame_id: int) -> list:
        return [t for t in self.tracks.values() if any(o.frame_id == frame_id for o in t.obs)]

    def on_marginalize(self, frame_id: int) -> None:
        for fid in list(self.tracks):
            t = self.tracks[fid]
            if t.base_frame_id == frame_id:
                self.retire(fid)
                continue
            t.obs = [o for o in t.obs if o.frame_id != frame_id]

    def needs_base(self, frame_id: int) -> bool:
        """True if an active track based at ``frame_id`` is still accumulating."""
        return any(
            t.base_frame_id == frame_id and len(t.obs) < self.min_obs for t in self.tracks.values()
        )


def select_marginalization(frame_ids, store: TrackStore, newest_frame: int, max_base_age: int) -> int:
    """Pick the clone to drop from a full window.

    The oldest clone goes unless it is the base frame of a track that is still
    accumulating and it is younger than ``max_base_age`` frames; then the
    second oldest goes instead.
    """
    oldest = frame_ids[0]
    if (
        store.mode == POSEONLY
        and len(frame_ids) > 1
        and newest_frame - oldest < max_base_age
        and store.needs_base(oldest)
    ):
        return frame_ids[1]
    return oldest
