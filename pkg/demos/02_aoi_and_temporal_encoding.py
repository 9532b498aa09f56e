"""
Age of information under asynchronous perception
=================================================

Control runs at 100 Hz, perception at 10 Hz with a 50 ms pipeline.
Every control tick sees the newest finished frame, so the age of the data
it acts on climbs in a sawtooth from 50 ms to 140 ms.
The age is then quantized to 10 ms and encoded with four sinusoids.
"""
import numpy as np

from asyncnav.schedule import ScheduleConfig, run_timeline
from asyncnav.temporal import encode, quantize

tl = run_timeline(ScheduleConfig(f_ctrl=100, f_perc=10, latency=0.05), horizon=0.4)
for t, a in tl.aoi[:25]:
    print(f"t={t:5.2f}s  age={a:5.2f}s  " + "#" * int(round(a * 100)))

# equal timestamps resolve as measurement, then feature arrival, then control,
# so at t = 0.15 the frame taken at 0.10 is already in hand
print("age at 0.15 s:", dict(tl.aoi)[0.15])

# synchronous operation is the zero-age limit used in the first training stage
sync = run_timeline(ScheduleConfig.synchronous(100), 0.2)
print("synchronous ages:", sorted({a for _, a in sync.aoi}))

# temporal encoding of a few ages
for age in (0.0, 0.014, 0.05, 0.14, 2.0):
    k, t = quantize(age)
    print(f"age {age:6.3f} -> step {k:4d} ({t:.2f} s) -> {np.round(encode(age), 6)}")
