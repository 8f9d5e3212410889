//! Rank-4 tensors in channel-last layout.
//!
//! Element `(n, h, w, c)` lives at `((n * H + h) * W + w) * C + c`. Tensors are
//! values: every operation returns a new tensor and the element buffer is never
//! exposed mutably outside the crate.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self { n, h, w, c }
    }

    pub const fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of pixels (`n * h * w`).
    pub const fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    #[inline]
    pub const fn index(&self, n: usize, h: usize, w: usize, c: usize) -> usize {
        ((n * self.h + h) * self.w + w) * self.c + c
    }

    pub const fn with_c(self, c: usize) -> Self {
        Self { c, ..self }
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 || self.h == 0 || self.w == 0 || self.c == 0 {
            return Err(invalid!(
                "all shape components must be >= 1, got {:?}",
                self
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.check()?;
        if data.len() != shape.len() {
            return Err(invalid!(
                "data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                shape.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Shape, value: T) -> Result<Self> {
        shape.check()?;
        Ok(Self {
            shape,
            data: vec![value; shape.len()],
        })
    }

    pub fn from_fn(
        shape: Shape,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Result<Self> {
        shape.check()?;
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for h in 0..shape.h {
                for w in 0..shape.w {
                    for c in 0..shape.c {
                        data.push(f(n, h, w, c));
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for buffers whose length is correct by construction.
    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, h: usize, w: usize, c: usize) -> T {
        self.data[self.shape.index(n, h, w, c)]
    }

    /// Channel vector of one pixel.
    #[inline]
    pub fn pixel(&self, n: usize, h: usize, w: usize) -> &[T] {
        let start = self.shape.index(n, h, w, 0);
        &self.data[start..start + self.shape.c]
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn zip_map<U: Copy, V: Copy>(
        &self,
        other: &Tensor<U>,
        mut f: impl FnMut(T, U) -> V,
    ) -> Result<Tensor<V>> {
        if self.shape != other.shape {
            return Err(invalid!(
                "shape mismatch: {:?} vs {:?}",
                self.shape,
                other.shape
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    /// Circular shift along the channel axis: channel `i` moves to `(i + k) mod C`.
    pub fn channel_rotate(&self, k: isize) -> Self {
        let c = self.shape.c;
        let shift = k.rem_euclid(c as isize) as usize;
        if shift == 0 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len());
        for fiber in self.data.chunks_exact(c) {
            // out[j] = in[(j - shift) mod C]
            data.extend_from_slice(&fiber[c - shift..]);
            data.extend_from_slice(&fiber[..c - shift]);
        }
        Self {
            shape: self.shape,
            data,
        }
    }

    /// Splits the channel axis into contiguous ranges of the given sizes.
    pub fn channel_split(&self, sizes: &[usize]) -> Result<Vec<Self>> {
        if sizes.contains(&0) {
            return Err(invalid!(
                "channel split sizes must be >= 1, got {:?}",
                sizes
            ));
        }
        let total: usize = sizes.iter().sum();
        if total != self.shape.c {
            return Err(invalid!(
                "channel split sizes {:?} sum to {} but tensor has {} channels",
                sizes,
                total,
                self.shape.c
            ));
        }
        let mut parts: Vec<Vec<T>> = sizes
            .iter()
            .map(|&s| Vec::with_capacity(self.shape.pixels() * s))
            .collect();
        for fiber in self.data.chunks_exact(self.shape.c) {
            let mut start = 0;
            for (part, &s) in parts.iter_mut().zip(sizes) {
                part.extend_from_slice(&fiber[start..start + s]);
                start += s;
            }
        }
        Ok(parts
            .into_iter()
            .zip(sizes)
            .map(|(data, &s)| Self {
                shape: self.shape.with_c(s),
                data,
            })
            .collect())
    }

    /// Concatenates along the channel axis, in order.
    pub fn channel_concat(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| invalid!("channel_concat of zero tensors"))?;
        let base = first.shape;
        for p in parts {
            if (p.shape.n, p.shape.h, p.shape.w) != (base.n, base.h, base.w) {
                return Err(invalid!(
                    "channel_concat spatial mismatch: {:?} vs {:?}",
                    p.shape,
                    base
                ));
            }
        }
        let c: usize = parts.iter().map(|p| p.shape.c).sum();
        let mut data = Vec::with_capacity(base.pixels() * c);
        for px in 0..base.pixels() {
            for p in parts {
                let pc = p.shape.c;
                data.extend_from_slice(&p.data[px * pc..(px + 1) * pc]);
            }
        }
        Ok(Self {
            shape: base.with_c(c),
            data,
        })
    }

    /// Stacks tensors along the batch axis.
    pub fn batch_concat(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| invalid!("batch_concat of zero tensors"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.data.len()).sum());
        let mut n = 0;
        for t in items {
            if (t.shape.h, t.shape.w, t.shape.c) != (s.h, s.w, s.c) {
                return Err(invalid!(
                    "batch_concat shape mismatch: {:?} vs {:?}",
                    t.shape,
                    s
                ));
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Ok(Self {
            shape: Shape { n, ..s },
            data,
        })
    }

    /// The `i`-th batch element as a tensor with `n = 1`.
    pub fn batch_item(&self, i: usize) -> Result<Self> {
        if i >= self.shape.n {
            return Err(invalid!(
                "batch index {} out of range for n = {}",
                i,
                self.shape.n
            ));
        }
        let len = self.shape.h * self.shape.w * self.shape.c;
        Ok(Self {
            shape: Shape { n: 1, ..self.shape },
            data: self.data[i * len..(i + 1) * len].to_vec(),
        })
    }

    /// Spatial crop of a `h x w` window at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h == 0 || w == 0 || top + h > s.h || left + w > s.w {
            return Err(invalid!(
                "crop {}x{} at ({}, {}) exceeds {}x{}",
                h,
                w,
                top,
                left,
                s.h,
                s.w
            ));
        }
        let out = Shape { h, w, ..s };
        let mut data = Vec::with_capacity(out.len());
        for n in 0..s.n {
            for y in top..top + h {
                let start = s.index(n, y, left, 0);
                data.extend_from_slice(&self.data[start..start + w * s.c]);
            }
        }
        Ok(Self { shape: out, data })
    }

    /// Rotation by 90 degrees counter-clockwise, `quarter_turns` times.
    pub fn rot90(&self, quarter_turns: u32) -> Self {
        let s = self.shape;
        match quarter_turns % 4 {
            0 => self.clone(),
            2 => self.remap(s, |n, y, x| (n, s.h - 1 - y, s.w - 1 - x)),
            // out(y, x) = in(x, W' - 1 - y) with W' = out width = in height
            1 => {
                let out = Shape {
                    h: s.w,
                    w: s.h,
                    ..s
                };
                self.remap(out, |n, y, x| (n, x, s.w - 1 - y))
            }
            _ => {
                let out = Shape {
                    h: s.w,
                    w: s.h,
                    ..s
                };
                self.remap(out, |n, y, x| (n, s.h - 1 - x, y))
            }
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let s = self.shape;
        self.remap(s, |n, y, x| (n, y, s.w - 1 - x))
    }

    pub fn flip_vertical(&self) -> Self {
        let s = self.shape;
        self.remap(s, |n, y, x| (n, s.h - 1 - y, x))
    }

    fn remap(
        &self,
        out: Shape,
        src: impl Fn(usize, usize, usize) -> (usize, usize, usize),
    ) -> Self {
        let mut data = Vec::with_capacity(out.len());
        for n in 0..out.n {
            for y in 0..out.h {
                for x in 0..out.w {
                    let (sn, sy, sx) = src(n, y, x);
                    data.extend_from_slice(self.pixel(sn, sy, sx));
                }
            }
        }
        Self { shape: out, data }
    }
}

impl<T: Copy + Default> Tensor<T> {
    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::filled(shape, T::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(shape: Shape) -> Tensor<i32> {
        Tensor::from_vec(shape, (0..shape.len() as i32).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<u8>::zeros(Shape::new(1, 0, 2, 3)).is_err());
        assert!(Tensor::from_vec(Shape::new(1, 2, 2, 1), alloc::vec![0u8; 3]).is_err());
    }

    #[test]
    fn rotate_small_example() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 4), alloc::vec![10, 20, 30, 40]).unwrap();
        assert_eq!(t.channel_rotate(1).data(), &[40, 10, 20, 30]);
        assert_eq!(t.channel_rotate(-1).data(), &[20, 30, 40, 10]);
        assert_eq!(t.channel_rotate(5).data(), &[40, 10, 20, 30]);
    }

    #[test]
    fn rotate_matches_permutation_oracle() {
        let t = ramp(Shape::new(2, 3, 2, 28));
        for k in -30isize..30 {
            let r = t.channel_rotate(k);
            for px in 0..t.shape().pixels() {
                for c in 0..28usize {
                    let dst = (c as isize + k).rem_euclid(28) as usize;
                    assert_eq!(r.data()[px * 28 + dst], t.data()[px * 28 + c]);
                }
            }
        }
    }

    #[test]
    fn rotate_full_and_quarter_cycles() {
        let t = ramp(Shape::new(1, 2, 2, 28));
        assert_eq!(t.channel_rotate(28), t);
        let mut r = t.clone();
        for _ in 0..4 {
            r = r.channel_rotate(7);
        }
        assert_eq!(r, t);
    }

    #[test]
    fn split_examples() {
        let t = ramp(Shape::new(1, 2, 3, 28));
        let parts = t.channel_split(&[21, 7]).unwrap();
        assert_eq!(parts[0].shape().c, 21);
        assert_eq!(parts[1].shape().c, 7);
        assert_eq!(parts[1].get(0, 1, 2, 0), t.get(0, 1, 2, 21));
        let parts = t.channel_split(&[16, 12]).unwrap();
        assert_eq!((parts[0].shape().c, parts[1].shape().c), (16, 12));
        let t8 = ramp(Shape::new(1, 2, 2, 8));
        assert_eq!(t8.channel_split(&[8]).unwrap(), alloc::vec![t8.clone()]);
        assert!(t.channel_split(&[20, 7]).is_err());
        assert!(t.channel_split(&[28, 0]).is_err());
    }

    #[test]
    fn concat_examples() {
        let a = Tensor::filled(Shape::new(1, 2, 2, 1), 3).unwrap();
        let b = Tensor::filled(Shape::new(1, 2, 2, 1), 9).unwrap();
        let ab = Tensor::channel_concat(&[a.clone(), b]).unwrap();
        assert_eq!(ab.pixel(0, 1, 1), &[3, 9]);
        assert_eq!(
            Tensor::channel_concat(core::slice::from_ref(&a)).unwrap(),
            a
        );
        let c = Tensor::filled(Shape::new(1, 3, 2, 1), 0).unwrap();
        assert!(Tensor::channel_concat(&[a, c]).is_err());
        assert!(Tensor::<u8>::channel_concat(&[]).is_err());
    }

    #[test]
    fn spatial_transforms() {
        let t = ramp(Shape::new(1, 2, 3, 1));
        // [[0 1 2], [3 4 5]]
        assert_eq!(t.rot90(1).data(), &[2, 5, 1, 4, 0, 3]);
        assert_eq!(t.rot90(3).data(), &[3, 0, 4, 1, 5, 2]);
        assert_eq!(t.rot90(2).data(), &[5, 4, 3, 2, 1, 0]);
        assert_eq!(t.rot90(1).rot90(3), t);
        assert_eq!(t.flip_horizontal().data(), &[2, 1, 0, 5, 4, 3]);
        assert_eq!(t.flip_vertical().data(), &[3, 4, 5, 0, 1, 2]);
        assert_eq!(t.crop(1, 1, 1, 2).unwrap().data(), &[4, 5]);
        assert!(t.crop(1, 1, 2, 2).is_err());
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor<i32>> {
        (1usize..3, 1usize..4, 1usize..4, 1usize..12).prop_flat_map(|(n, h, w, c)| {
            let shape = Shape::new(n, h, w, c);
            proptest::collection::vec(-50i32..50, shape.len())
                .prop_map(move |d| Tensor::from_vec(shape, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rotate_inverse_and_fiber_multiset(t in arb_tensor(), k in -40isize..40) {
            let r = t.channel_rotate(k);
            prop_assert_eq!(r.channel_rotate(-k), t.clone());
            prop_assert_eq!(r.shape(), t.shape());
            for (a, b) in t.data().chunks(t.shape().c).zip(r.data().chunks(t.shape().c)) {
                let mut a = a.to_vec();
                let mut b = b.to_vec();
                a.sort();
                b.sort();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn concat_inverts_split(t in arb_tensor(), seed in any::<u64>()) {
            // random composition of C
            let c = t.shape().c;
            let mut sizes = alloc::vec::Vec::new();
            let mut left = c;
            let mut s = seed;
            while left > 0 {
                let take = 1 + (s as usize % left);
                s = s.rotate_left(7) ^ 0x9e37_79b9;
                sizes.push(take);
                left -= take;
            }
            let parts = t.channel_split(&sizes).unwrap();
            for p in &parts {
                prop_assert_eq!((p.shape().n, p.shape().h, p.shape().w), (t.shape().n, t.shape().h, t.shape().w));
            }
            prop_assert_eq!(Tensor::channel_concat(&parts).unwrap(), t);
        }
    }
}
