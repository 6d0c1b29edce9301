//! Escape-time renders of complex slices of K₊ and K₋ as binary PGM.

use std::io::Write;

use rayon::prelude::*;

use crate::map::{Direction, HenonMap, Point2C, C64};
use crate::{Error, Result};

/// A complex line in C²: one coordinate fixed, the other free.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Slice {
    /// w fixed, z free.
    W(C64),
    /// z fixed, w free.
    Z(C64),
}

impl Slice {
    /// `w=0`, `w=0.1,-0.2`, `z=1` (re[,im]).
    pub fn parse(s: &str) -> Result<Slice> {
        let bad = || Error::InvalidArgument(format!("slice '{s}': expected w=re[,im] or z=re[,im]"));
        let (axis, val) = s.split_once('=').ok_or_else(bad)?;
        let parts: Vec<f64> = val
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let c = match parts[..] {
            [re] => C64::new(re, 0.0),
            [re, im] => C64::new(re, im),
            _ => return Err(bad()),
        };
        match axis.trim() {
            "w" => Ok(Slice::W(c)),
            "z" => Ok(Slice::Z(c)),
            _ => Err(bad()),
        }
    }

    fn point(self, u: C64) -> Point2C {
        match self {
            Slice::W(w) => Point2C::new(u, w),
            Slice::Z(z) => Point2C::new(z, u),
        }
    }
}

/// First step at which the orbit enters the region where |z₁| ≥ max(R, |z₂|); this
/// region is forward invariant and every orbit in it escapes. `None` if that does
/// not happen within `n_max` steps.
pub fn escape_step(map: &HenonMap, q: Point2C, n_max: usize, radius: f64) -> Option<usize> {
    let mut x = q;
    for k in 0..=n_max {
        let (a, b) = (x.z1.norm(), x.z2.norm());
        if !(a < radius.max(b)) {
            return Some(k);
        }
        if k == n_max {
            break;
        }
        x = match map.step(x, Direction::Forward) {
            Ok(y) => y,
            Err(_) => return Some(k + 1),
        };
    }
    None
}

/// Gray levels, row 0 at the top (largest imaginary part). Bounded orbits are 0;
/// an orbit escaping at step k gets 255 − ⌊254k/n_max⌋.
pub fn escape_time_image(map: &HenonMap, slice: Slice, res: usize, extent: f64, dir: Direction, n_max: usize) -> Vec<u8> {
    // K₋ of f is K₊ of the inverse conjugated by the swap (z, w) ↦ (w, z)
    let (m, swap) = match dir {
        Direction::Forward => (map.clone(), false),
        Direction::Backward => (map.inverse_conjugate(), true),
    };
    let radius = m.filtration_radius();
    let step = 2.0 * extent / res as f64;
    let mut px = vec![0u8; res * res];
    px.par_chunks_mut(res).enumerate().for_each(|(row, line)| {
        let im = extent - (row as f64 + 0.5) * step;
        for (col, v) in line.iter_mut().enumerate() {
            let re = -extent + (col as f64 + 0.5) * step;
            let mut q = slice.point(C64::new(re, im));
            if swap {
                q = q.swap();
            }
            *v = match escape_step(&m, q, n_max, radius) {
                None => 0,
                Some(k) => (255 - (254 * k.min(n_max)) / n_max.max(1)) as u8,
            };
        }
    });
    px
}

pub fn write_pgm<W: Write>(w: &mut W, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::InvalidArgument(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    write!(w, "P5 {width} {height} 255\n")?;
    w.write_all(pixels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_parsing() {
        assert_eq!(Slice::parse("w=0").unwrap(), Slice::W(C64::new(0.0, 0.0)));
        assert_eq!(Slice::parse("z=0.5,-1").unwrap(), Slice::Z(C64::new(0.5, -1.0)));
        for s in ["w", "x=0", "w=a", "w=1,2,3"] {
            assert!(Slice::parse(s).is_err(), "{s}");
        }
    }

    #[test]
    fn fixed_points_are_bounded_and_far_points_escape_at_once() {
        let f = HenonMap::reference();
        let r0 = C64::new(0.0, -0.5).sqrt();
        let r = f.filtration_radius();
        assert_eq!(escape_step(&f, Point2C::new(r0, r0), 200, r), None);
        assert_eq!(escape_step(&f, Point2C::new(C64::new(2.0 * r, 0.0), C64::new(0.0, 0.0)), 200, r), Some(0));
    }

    #[test]
    fn pgm_header_and_size() {
        let f = HenonMap::reference();
        let px = escape_time_image(&f, Slice::W(C64::new(0.0, 0.0)), 16, 2.0, Direction::Forward, 50);
        let mut out = Vec::new();
        write_pgm(&mut out, 16, 16, &px).unwrap();
        assert!(out.starts_with(b"P5 16 16 255\n"));
        assert_eq!(out.len(), 13 + 256);
        // corners escape at once; orbits starting near the slice of K₊ take longer
        assert_eq!(px[0], 255 - 254 / 50);
        assert!(px.iter().any(|&v| v < 200));
    }

    #[test]
    fn backward_render_of_a_swap_symmetric_map() {
        // δ = 1: f⁻¹ = s∘f∘s with s the swap, so K₋ is the mirror image of K₊
        let f = HenonMap::quadratic(C64::new(-0.5, 0.2), C64::new(1.0, 0.0)).unwrap();
        let a = escape_time_image(&f, Slice::W(C64::new(0.1, 0.0)), 24, 2.0, Direction::Forward, 60);
        let b = escape_time_image(&f, Slice::Z(C64::new(0.1, 0.0)), 24, 2.0, Direction::Backward, 60);
        assert_eq!(a, b);
    }
}
