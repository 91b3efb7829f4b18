/// Pixels whose label differs from all of their 8-connected neighbours,
/// i.e. connected components of size one.
pub fn isolated_pixels(labels: &[u16], height: usize, width: usize) -> u64 {
    assert_eq!(labels.len(), height * width, "label map size");
    let mut count = 0;
    for r in 0..height {
        for c in 0..width {
            let l = labels[r * width + c];
            let mut alone = true;
            'scan: for nr in r.saturating_sub(1)..(r + 2).min(height) {
                for nc in c.saturating_sub(1)..(c + 2).min(width) {
                    if (nr, nc) != (r, c) && labels[nr * width + nc] == l {
                        alone = false;
                        break 'scan;
                    }
                }
            }
            count += alone as u64;
        }
    }
    count
}
