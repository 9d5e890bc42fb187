use crate::error::{Error, Result};
use crate::imagekit::ImageTensor;
use crate::scalar::Scalar;

/// Batch × channels × height × width, contiguous in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Shape(format!(
                "{} values for a {n}x{c}x{h}x{w} tensor",
                data.len()
            )));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    /// Stack channel-last images into a channel-first batch.
    pub fn from_images(images: &[&ImageTensor<T>]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("empty image batch".into()))?;
        let (h, w, c) = (first.height(), first.width(), first.channels());
        let mut t = Self::zeros(images.len(), c, h, w);
        for (n, img) in images.iter().enumerate() {
            if (img.height(), img.width(), img.channels()) != (h, w, c) {
                return Err(Error::Shape(format!(
                    "batch image {n} is {}x{}x{}, expected {h}x{w}x{c}",
                    img.height(),
                    img.width(),
                    img.channels()
                )));
            }
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        let v = img.get(y, x, ch);
                        t.set(n, ch, y, x, v);
                    }
                }
            }
        }
        Ok(t)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.n, self.c, self.h, self.w) == (other.n, other.c, other.h, other.w)
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Channels `start..start+count` of every sample.
    pub fn narrow_channels(&self, start: usize, count: usize) -> Self {
        assert!(start + count <= self.c, "channel range out of bounds");
        let mut out = Self::zeros(self.n, count, self.h, self.w);
        let pl = self.plane_len();
        for n in 0..self.n {
            let src = (n * self.c + start) * pl;
            let dst = n * count * pl;
            out.data[dst..dst + count * pl].copy_from_slice(&self.data[src..src + count * pl]);
        }
        out
    }

    /// Write `src` into channels starting at `start`.
    pub fn write_channels(&mut self, start: usize, src: &Self) {
        assert_eq!((src.n, src.h, src.w), (self.n, self.h, self.w));
        assert!(start + src.c <= self.c, "channel range out of bounds");
        let pl = self.plane_len();
        for n in 0..self.n {
            let dst = (n * self.c + start) * pl;
            let s = n * src.c * pl;
            self.data[dst..dst + src.c * pl].copy_from_slice(&src.data[s..s + src.c * pl]);
        }
    }

    /// Accumulate `src` into channels starting at `start`.
    pub fn add_channels(&mut self, start: usize, src: &Self) {
        assert_eq!((src.n, src.h, src.w), (self.n, self.h, self.w));
        assert!(start + src.c <= self.c, "channel range out of bounds");
        let pl = self.plane_len();
        for n in 0..self.n {
            let dst = (n * self.c + start) * pl;
            let s = n * src.c * pl;
            for (d, &v) in self.data[dst..dst + src.c * pl]
                .iter_mut()
                .zip(&src.data[s..s + src.c * pl])
            {
                *d += v;
            }
        }
    }

    /// Channel-wise concatenation of tensors sharing batch and spatial dims.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        if parts
            .iter()
            .any(|p| (p.n, p.h, p.w) != (first.n, first.h, first.w))
        {
            return Err(Error::Shape(
                "concatenated feature maps must share batch and spatial dims".into(),
            ));
        }
        let total: usize = parts.iter().map(|p| p.c).sum();
        let mut out = Self::zeros(first.n, total, first.h, first.w);
        let mut at = 0;
        for p in parts {
            out.write_channels(at, p);
            at += p.c;
        }
        Ok(out)
    }
}
