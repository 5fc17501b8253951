use super::config::PipelineConfig;
use crate::boxes::Box3D;
use crate::error::{Error, Result};
use crate::geometry::{disparity_to_point, point_to_pixel, CameraRig};
use crate::grid::{Map, Mask};

fn morph(mask: &Mask, offsets: &[(isize, isize)], dilate: bool) -> Mask {
    let (h, w) = mask.shape();
    Mask::from_fn(h, w, |v, u| {
        let hit = |&(dv, du): &(isize, isize)| {
            let (y, x) = (v as isize + dv, u as isize + du);
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                // outside counts as set for erosion, unset for dilation
                return !dilate;
            }
            *mask.get(y as usize, x as usize)
        };
        if dilate {
            offsets.iter().any(hit)
        } else {
            offsets.iter().all(hit)
        }
    })
}

fn square(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    (-r..=r).flat_map(|dv| (-r..=r).map(move |du| (dv, du))).collect()
}

fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    square(radius).into_iter().filter(|(dv, du)| dv * dv + du * du <= r * r).collect()
}

pub fn dilate_disk(mask: &Mask, radius: usize) -> Mask {
    morph(mask, &disk(radius), true)
}

/// 3x3 morphological closing. The result always contains the input.
pub fn close_3x3(mask: &Mask) -> Mask {
    let k = square(1);
    morph(&morph(mask, &k, true), &k, false)
}

/// Inside the box grown by `margin`, excluding the slab within `margin` of
/// the bottom face, which is where the ground lies.
fn in_label(b: &Box3D, p: [f64; 3], margin: f64) -> bool {
    b.contains(p, margin) && b.to_local(p)[1] >= margin
}

/// [`project_labels_to_fg_mask`] over the back-projection of every pixel
/// with a positive disparity.
pub fn fg_mask_from_disparity(disparity: &Map, labels: &[Box3D], rig: &CameraRig, margin: f64) -> Mask {
    let (h, w) = disparity.shape();
    let raw = Mask::from_fn(h, w, |v, u| {
        let Ok(p) = disparity_to_point(u as f64, v as f64, *disparity.get(v, u), rig) else {
            return false;
        };
        labels.iter().any(|b| in_label(b, p, margin))
    });
    close_3x3(&raw)
}

/// Foreground mask from labels: each point inside a labelled box (grown by
/// `margin` meters) marks its nearest pixel, then small holes are closed.
pub fn project_labels_to_fg_mask(
    points: &[[f64; 3]],
    labels: &[Box3D],
    rig: &CameraRig,
    shape: (usize, usize),
    margin: f64,
) -> Mask {
    let (h, w) = shape;
    let mut raw = Mask::filled(h, w, false);
    for p in points {
        if !(p[2] > 0.0) || !labels.iter().any(|b| in_label(b, *p, margin)) {
            continue;
        }
        let (u, v, _) = point_to_pixel(*p, rig);
        let (u, v) = (u.round(), v.round());
        if u >= 0.0 && v >= 0.0 && (u as usize) < w && (v as usize) < h {
            raw.set(v as usize, u as usize, true);
        }
    }
    close_3x3(&raw)
}

/// One cyclist mask per rider whose disk-dilated mask touches at least one
/// bicycle: the rider unioned with every touching bicycle. Riders without a
/// bicycle and bicycles without a rider yield nothing.
pub fn merge_cyclist_masks(riders: &[Mask], bicycles: &[Mask], radius: usize) -> Result<Vec<Mask>> {
    let shape = match riders.first().or(bicycles.first()) {
        Some(m) => m.shape(),
        None => return Ok(Vec::new()),
    };
    for m in riders.iter().chain(bicycles) {
        if m.shape() != shape {
            return Err(Error::Shape(format!("instance mask {:?} vs {:?}", m.shape(), shape)));
        }
    }
    Ok(riders
        .iter()
        .filter_map(|rider| {
            let grown = dilate_disk(rider, radius);
            let mut out = rider.clone();
            let mut any = false;
            for bike in bicycles {
                if grown.data().iter().zip(bike.data()).any(|(a, b)| *a && *b) {
                    any = true;
                    for (o, b) in out.data_mut().iter_mut().zip(bike.data()) {
                        *o |= *b;
                    }
                }
            }
            any.then_some(out)
        })
        .collect())
}

/// [`merge_cyclist_masks`] with the radius scaled to the mask height.
pub fn cyclist_masks(cfg: &PipelineConfig, riders: &[Mask], bicycles: &[Mask]) -> Result<Vec<Mask>> {
    let h = riders.first().or(bicycles.first()).map_or(0, Mask::height);
    merge_cyclist_masks(riders, bicycles, cfg.cyclist_radius(h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxes::ObjectClass;
    use proptest::prelude::*;

    fn mask_from(rows: &[&str]) -> Mask {
        Mask::from_fn(rows.len(), rows[0].len(), |v, u| rows[v].as_bytes()[u] == b'#')
    }

    #[test]
    fn closing_fills_a_pinhole_and_keeps_borders() {
        let m = mask_from(&["#####", "##.##", "#####"]);
        assert_eq!(close_3x3(&m).count(), 15);
        let corner = mask_from(&["#....", ".....", "....."]);
        assert_eq!(close_3x3(&corner), corner);
    }

    #[test]
    fn disk_dilation_radius() {
        let mut m = Mask::filled(11, 11, false);
        m.set(5, 5, true);
        let d = dilate_disk(&m, 2);
        assert!(*d.get(5, 7) && *d.get(3, 5) && *d.get(4, 4));
        assert!(!*d.get(3, 3));
        assert_eq!(d.count(), 13);
    }

    #[test]
    fn rider_merges_with_touching_bike_only() {
        let rider = mask_from(&["##......", "##......", "........"]);
        let near = mask_from(&["........", "....#...", "....#..."]);
        let far = mask_from(&["........", "........", ".......#"]);
        let merged = merge_cyclist_masks(&[rider.clone()], &[near.clone(), far.clone()], 3).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].count(), rider.count() + near.count());
        assert!(merge_cyclist_masks(&[rider.clone()], &[far], 3).unwrap().is_empty());
        assert!(merge_cyclist_masks(&[rider.clone()], &[], 2).unwrap().is_empty());
        let wrong = Mask::filled(2, 2, false);
        assert!(matches!(merge_cyclist_masks(&[rider], &[wrong], 2), Err(Error::Shape(_))));
    }

    #[test]
    fn rider_between_two_bikes_takes_both() {
        // 3-instance toy grid; enumerate the union by hand
        let rider = mask_from(&["...#...", "...#...", "......."]);
        let left = mask_from(&[".......", ".#.....", "......."]);
        let right = mask_from(&[".......", "......#", "......."]);
        let merged = merge_cyclist_masks(&[rider], &[left, right], 2).unwrap();
        assert_eq!(merged, vec![mask_from(&["...#...", ".#.#...", "......."])]);
        // radius 3 reaches the right bike too
        let rider = mask_from(&["...#...", "...#...", "......."]);
        let left = mask_from(&[".......", ".#.....", "......."]);
        let right = mask_from(&[".......", "......#", "......."]);
        let merged = merge_cyclist_masks(&[rider], &[left, right], 3).unwrap();
        assert_eq!(merged, vec![mask_from(&["...#...", ".#.#..#", "......."])]);
    }

    #[test]
    fn empty_labels_and_near_misses_are_background() {
        let rig = CameraRig::new(15.5, 7.5, 20.0, 20.0, 0.5).unwrap();
        let pts = vec![[0.0, 0.5, 10.0]];
        assert_eq!(project_labels_to_fg_mask(&pts, &[], &rig, (16, 32), 0.0).count(), 0);
        let b = Box3D::new([0.0, 1.0, 11.001], [2.0, 2.0, 2.0], 0.0, ObjectClass::Car, 1.0).unwrap();
        // the box starts 1 mm behind the point
        assert_eq!(project_labels_to_fg_mask(&pts, &[b], &rig, (16, 32), 0.0).count(), 0);
        let b = Box3D::new([0.0, 1.0, 10.999], [2.0, 2.0, 2.0], 0.0, ObjectClass::Car, 1.0).unwrap();
        assert_eq!(project_labels_to_fg_mask(&pts, &[b], &rig, (16, 32), 0.0).count(), 1);
    }

    #[test]
    fn labels_project_onto_the_box_pixels() {
        let rig = CameraRig::new(15.5, 7.5, 20.0, 20.0, 0.5).unwrap();
        let b = Box3D::new([0.0, 1.0, 10.0], [2.0, 2.0, 2.0], 0.0, ObjectClass::Car, 1.0).unwrap();
        // a fronto-parallel wall at the box front face
        let d = Map::filled(16, 32, rig.focal_baseline() / 9.0);
        let m = fg_mask_from_disparity(&d, &[b], &rig, 0.0);
        // x in [-1, 1] at z = 9 spans u in 15.5 +- 2.2, y in [-1, 1] spans v in 7.5 +- 2.2
        assert!(*m.get(7, 15) && *m.get(6, 14));
        assert!(!*m.get(7, 20) && !*m.get(1, 15));
        let pts: Vec<[f64; 3]> = (0..16)
            .flat_map(|v| (0..32).map(move |u| (u, v)))
            .map(|(u, v)| disparity_to_point(u as f64, v as f64, *d.get(v, u), &rig).unwrap())
            .collect();
        assert_eq!(project_labels_to_fg_mask(&pts, &[b], &rig, (16, 32), 0.0), m);
    }

    #[test]
    fn cyclist_radius_follows_image_height() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.cyclist_radius(128), 5);
        assert_eq!(cfg.cyclist_radius(64), 3);
        assert_eq!(cfg.cyclist_radius(375), 15);
        // a bike 4 px away merges at 128 rows but not at 64
        let rider = Mask::from_fn(64, 16, |v, u| v == 0 && u == 0);
        let bike = Mask::from_fn(64, 16, |v, u| v == 0 && u == 4);
        assert!(cyclist_masks(&cfg, &[rider.clone()], &[bike.clone()]).unwrap().is_empty());
        let tall = |m: &Mask| Mask::from_fn(128, 16, |v, u| v < 64 && *m.get(v, u));
        assert_eq!(cyclist_masks(&cfg, &[tall(&rider)], &[tall(&bike)]).unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn closing_is_extensive_and_idempotent(bits in proptest::collection::vec(any::<bool>(), 48)) {
            let m = Mask::from_vec(6, 8, bits).unwrap();
            let c = close_3x3(&m);
            prop_assert!(m.data().iter().zip(c.data()).all(|(a, b)| !*a || *b));
            prop_assert_eq!(close_3x3(&c), c);
        }
    }
}
