use ncaqd::grid::{Game, Level};
use ncaqd_wasm::{analyze, grow, solve};

#[test]
fn grow_returns_frames_of_the_right_size() {
    let v = grow("maze", &[], 1, 2, 20).unwrap();
    let frames = v["frames"].as_array().unwrap();
    assert!(!frames.is_empty() && frames.len() <= 21);
    for f in frames {
        let level = Level::from_text(Game::Maze, f.as_str().unwrap()).unwrap();
        assert_eq!((level.height, level.width), (16, 16));
    }
    assert_eq!(grow("maze", &[], 1, 2, 20).unwrap(), v);
}

#[test]
fn grow_rejects_bad_input() {
    assert!(grow("chess", &[], 1, 2, 5).is_err());
    assert!(grow("maze", b"not a genome", 1, 2, 5).is_err());
}

#[test]
fn analyze_reports_measures() {
    let text = "...\n.#.\n...\n";
    let v = analyze("maze", text).unwrap();
    assert_eq!(v["validity"], 0.0);
    assert_eq!(v["measure_names"][1], "path-length");
    assert_eq!(v["measures"].as_array().unwrap().len(), 2);
    assert!(analyze("maze", "..\n.\n").is_err());
}

#[test]
fn solve_finds_shortest_push() {
    let v = solve("#####\n#@$X#\n#####\n", 1000).unwrap();
    assert_eq!(v["status"], "Solved");
    assert_eq!(v["moves"], "R");
    assert!(solve("#####\n#@..#\n#####\n", 1000).is_err());
}
