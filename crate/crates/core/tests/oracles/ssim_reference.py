# Reference SSIM values for the acceptance suite (scikit-image, Gaussian window).
# Images come from the same 64-bit LCG as tests/common/mod.rs::lcg_image.
import numpy as np
from skimage.metrics import structural_similarity
M = (1 << 64) - 1
def lcg_image(seed, shape):
    s = seed & M
    out = np.empty(int(np.prod(shape)))
    for i in range(out.size):
        s = (s * 6364136223846793005 + 1442695040888963407) & M
        out[i] = (s >> 11) / float(1 << 53)
    return out.reshape(shape)
def ss(a, b):
    return structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                 use_sample_covariance=False, channel_axis=0)
shape = (3, 32, 32)
for i in range(10):
    a = lcg_image(2*i+1, shape); b = lcg_image(2*i+2, shape)
    # blend so values are not all near zero
    b = 0.5*a + 0.5*b
    print(i, repr(ss(a, b)))
a = 0.4 + 0.2*lcg_image(99, shape)
print("shift", repr(ss(a, a+0.1)))
a = lcg_image(100, shape)
print("invert", repr(ss(a, 1-a)))
