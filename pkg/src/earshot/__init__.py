"""earshot: deterministic sound-causal co-simulation and audio-reactive chunked policies.

The package couples an integer-exact decision clock to a streaming audio ring,
simulates small planar manipulation tasks whose success hinges on hearing the
right cue at the right time, and trains compact numpy policies (streaming
memory + fusion encoder + future-sound codec + flow-matching action head)
against scripted privileged experts.
"""

__version__ = "0.1.0"

from .timebase import TimingConfig  # noqa: F401
