use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use prefalign::numerics::RngStream;
use prefalign::pairgen::{ConfusionTable, PronunciationPerturber, PunctuationPerturber, TextPerturber};
use prefalign::pipeline::{ExternalPerturber, PerturbMode};
use prefalign::toymodels::ToyDims;

/// Serves one canned HTTP response per connection and hands back the request
/// bodies it saw.
fn mock(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/perturb", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut req = vec![0; length];
            reader.read_exact(&mut req).unwrap();
            bodies.push(String::from_utf8(req).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

fn local() -> PronunciationPerturber {
    PronunciationPerturber {
        table: ConfusionTable::neighbours(&ToyDims::default()),
        rate: 0.3,
    }
}

#[test]
fn remote_result_is_used_when_valid() {
    let (url, server) = mock(vec![(200, r#"{"text":[7,40,8]}"#.into())]);
    let p = ExternalPerturber::new(url, PerturbMode::Pronunciation, ToyDims::default(), local()).unwrap();
    assert_eq!(p.perturb(&[1, 2, 3], &mut RngStream::new(1, 0)), vec![7, 40, 8]);
    let bodies = server.join().unwrap();
    let req: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(req, serde_json::json!({"text": [1, 2, 3], "mode": "pronunciation"}));
}

#[test]
fn failures_fall_back_to_the_local_perturber() {
    let text = [1, 2, 3, 4, 5, 6];
    let expected = local().perturb(&text, &mut RngStream::new(9, 0));
    let (url, server) = mock(vec![
        (500, r#"{"error":"down"}"#.into()),
        (200, r#"{"text":[999]}"#.into()),
        (200, r#"{"text":[]}"#.into()),
        (200, "not json".into()),
    ]);
    let p = ExternalPerturber::new(url, PerturbMode::Pronunciation, ToyDims::default(), local()).unwrap();
    for _ in 0..4 {
        assert_eq!(p.perturb(&text, &mut RngStream::new(9, 0)), expected);
    }
    assert_eq!(server.join().unwrap().len(), 4);
}

#[test]
fn unreachable_service_falls_back() {
    // Bind then drop to get a port with nothing listening.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let fallback = PunctuationPerturber { boundary: 40 };
    let expected = fallback.perturb(&[1, 2, 3], &mut RngStream::new(2, 0));
    let p = ExternalPerturber::new(
        format!("http://127.0.0.1:{port}/"),
        PerturbMode::Punctuation,
        ToyDims::default(),
        fallback,
    )
    .unwrap();
    assert_eq!(p.perturb(&[1, 2, 3], &mut RngStream::new(2, 0)), expected);
}
