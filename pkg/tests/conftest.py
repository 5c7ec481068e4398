import math

import numpy as np
import pytest

from stereoscene.audio_io import AudioBuffer
from stereoscene.scene import MicArray, SceneSpec, SourceSpec


@pytest.fixture
def noise_clip():
    rng = np.random.default_rng(1234)
    return AudioBuffer(rng.standard_normal(16000 * 10) * 0.2, 16000)


def open_field_scene(sources, half_spacing=0.085, duration=10.0):
    """100 m anechoic room with a centered array: the workhorse test scene."""
    mic = MicArray(center=(50.0, 50.0, 50.0), half_spacing=half_spacing)
    return SceneSpec(room_dims=(100.0, 100.0, 100.0), rt60=None, mic_array=mic,
                     sources=tuple(sources), duration=duration, sample_rate=16000)


def polar_pos(theta_deg, dist, center=(50.0, 50.0, 50.0)):
    th = math.radians(theta_deg)
    return (center[0] + dist * math.sin(th), center[1] + dist * math.cos(th), center[2])


def still_source(theta_deg, dist, **kw):
    pos = polar_pos(theta_deg, dist)
    return SourceSpec(start_pos=pos, end_pos=pos, angle=theta_deg, distance=dist,
                      movement="still", **kw)


def moving_source(theta0, theta1, dist, move_start=0.5, move_interval=8.0):
    return SourceSpec(
        start_pos=polar_pos(theta0, dist), end_pos=polar_pos(theta1, dist),
        angle=theta0, distance=dist, movement="moving", end_angle=theta1,
        end_distance=dist, speed_ratio=move_interval / 10.0,
        move_start=move_start, move_interval=move_interval,
    )


def geometric_itd_s(scene, pos):
    """Exact path-difference ITD for a position in a scene (left minus right)."""
    p = np.asarray(pos)
    d_left = float(np.linalg.norm(p - scene.mic_array.left_pos))
    d_right = float(np.linalg.norm(p - scene.mic_array.right_pos))
    return (d_left - d_right) / 343.0


def rms_normalize(buf: AudioBuffer, target_dbfs=-10.0) -> AudioBuffer:
    rms = float(np.sqrt(np.mean(np.square(buf.data))))
    gain = 10.0 ** (target_dbfs / 20.0) / rms
    return AudioBuffer(buf.data * gain, buf.sample_rate)
