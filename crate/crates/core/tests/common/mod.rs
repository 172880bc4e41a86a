#![allow(dead_code)]

use nalgebra::Vector3;
use splatseg_core::prompt::ClickPrompt;
use splatseg_core::{CameraView, GaussianScene};

/// Region growing by repeated all-pairs scans; no spatial index.
pub fn brute_force_grow(points: &[Vector3<f64>], seeds: &[usize], eps: f64) -> Vec<bool> {
    let mut grown = vec![false; points.len()];
    let mut frontier: Vec<usize> = seeds.to_vec();
    for &s in seeds {
        grown[s] = true;
    }
    while let Some(i) = frontier.pop() {
        for j in 0..points.len() {
            if !grown[j] && (points[j] - points[i]).norm_squared() <= eps * eps {
                grown[j] = true;
                frontier.push(j);
            }
        }
    }
    grown
}

/// Click at the rounded projection of a world point.
pub fn click_at(view: &CameraView, p: &Vector3<f64>, instance_id: u32) -> ClickPrompt {
    let (u, v, _) = view.project(p).expect("point in front of camera");
    ClickPrompt::new(view.view_id.clone(), u.round(), v.round(), instance_id)
}

pub fn labeled_set(scene: &GaussianScene, id: u32) -> Vec<usize> {
    scene
        .primitives
        .iter()
        .enumerate()
        .filter(|(_, g)| g.instance_label == id)
        .map(|(i, _)| i)
        .collect()
}
