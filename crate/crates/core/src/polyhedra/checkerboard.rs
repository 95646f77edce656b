use super::{HRep, PolyError};

/// Tile-mean sign constraints on a `side x side` image split into
/// `tiles_per_side^2` square tiles.
///
/// Row `t` holds `s_t / |tile|` on the pixels of tile `t`, where `s_t = -1`
/// when the tile's row and column index have an even sum and `+1` otherwise.
/// Under `A z <= 0` the top-left tile therefore has a nonnegative mean and its
/// neighbours a nonpositive one. Pixels are indexed row-major.
pub fn checkerboard_hrep(side: usize, tiles_per_side: usize) -> Result<HRep, PolyError> {
    if tiles_per_side == 0 || side == 0 || !side.is_multiple_of(tiles_per_side) {
        return Err(PolyError::InvalidGrid {
            side,
            tiles: tiles_per_side,
        });
    }
    let tile = side / tiles_per_side;
    let d = side * side;
    let m = tiles_per_side * tiles_per_side;
    let weight = 1.0 / (tile * tile) as f64;
    let mut a = vec![0.0; m * d];
    for ti in 0..tiles_per_side {
        for tj in 0..tiles_per_side {
            let t = ti * tiles_per_side + tj;
            let sign = if (ti + tj) % 2 == 0 { -1.0 } else { 1.0 };
            for r in ti * tile..(ti + 1) * tile {
                for c in tj * tile..(tj + 1) * tile {
                    a[t * d + r * side + c] = sign * weight;
                }
            }
        }
    }
    HRep::new(m, d, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nonzeros(h: &HRep, i: usize) -> Vec<f64> {
        h.row(i).iter().copied().filter(|&x| x != 0.0).collect()
    }

    #[test]
    fn mnist_grid() {
        let h = checkerboard_hrep(28, 4).unwrap();
        assert_eq!((h.m(), h.d()), (16, 784));
        for i in 0..16 {
            let nz = nonzeros(&h, i);
            assert_eq!(nz.len(), 49);
            assert!(nz.iter().all(|x| (x.abs() - 1.0 / 49.0).abs() < 1e-18));
        }
        // neighbouring tiles have opposite signs
        assert!(h.row(0)[0] < 0.0);
        assert!(h.row(1)[7] > 0.0);
        assert!(h.row(4)[7 * 28] > 0.0);
        assert!(h.row(5)[7 * 28 + 7] < 0.0);
    }

    #[test]
    fn two_by_two_is_signed_identity() {
        let h = checkerboard_hrep(2, 2).unwrap();
        assert_eq!((h.m(), h.d()), (4, 4));
        let expected = [
            [-1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, -1.0],
        ];
        for (i, row) in expected.iter().enumerate() {
            assert_eq!(h.row(i), row);
        }
    }

    #[test]
    fn desk_grid() {
        let h = checkerboard_hrep(16, 2).unwrap();
        assert_eq!((h.m(), h.d()), (4, 256));
        for i in 0..4 {
            assert_eq!(nonzeros(&h, i).len(), 64);
        }
    }

    #[test]
    fn non_divisible_grid() {
        assert!(matches!(
            checkerboard_hrep(10, 3),
            Err(PolyError::InvalidGrid { side: 10, tiles: 3 })
        ));
        assert!(checkerboard_hrep(4, 0).is_err());
    }
}
